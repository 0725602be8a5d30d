"""Command-line entry point.

Subcommands are thin shells over the library modules, driven by a TOML
experiment file (inspect also accepts a model document directly):

    nnc inspect   <model.json | experiment.toml>
    nnc transform <experiment.toml>
    nnc quantize  <experiment.toml>
    nnc evaluate  <experiment.toml>
    nnc codegen   <experiment.toml>
    nnc estimate  <experiment.toml> [--json]

Exit codes: 1 for module errors, 2 for configuration/schema errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import allocator, archive, codegen, costmodel, interpreter, model_io, transforms
from .errors import ConfigError, NncError, SchemaError, VersionError
from .ir import infer_shapes, parameter_count, topo_order, validate
from .quantizer import (
    QuantizationScheme,
    calibrate,
    fake_quantize_forward,
    quantize_model,
)

_KNOWN_SECTIONS = {"model", "quantization", "evaluation", "output", "experiment"}
# Training-flow sections stay loadable but do nothing here.
_IGNORED_SECTIONS = {"training", "optimizer", "dataset", "preprocessing", "model_template"}


class Experiment:
    def __init__(self, config: dict, base_dir: str):
        self.config = config
        self.base_dir = base_dir

    def path(self, value: str) -> str:
        return os.path.join(self.base_dir, value)

    @property
    def model_path(self) -> str:
        try:
            return self.path(self.config["model"]["path"])
        except KeyError:
            raise ConfigError("config is missing [model] path") from None

    @property
    def output_dir(self) -> str:
        directory = self.config.get("output", {}).get("directory", "out")
        return self.path(directory)

    @property
    def iterations(self) -> int:
        return int(self.config.get("experiment", {}).get("iterations", 1))

    def scheme(self) -> QuantizationScheme | None:
        section = self.config.get("quantization")
        if section is None:
            return None
        width = section.get("width")
        if width not in (8, 9, 16):
            raise ConfigError(f"quantization width must be 8, 9 or 16, got {width!r}")
        policy = section.get("policy", "per_network")
        if policy == "per_network":
            frac = section.get("fraction_bits")
            if frac == "auto":
                # Resolved after calibration (derive_network_frac).
                return QuantizationScheme(width=width, policy="per_network")
            if not isinstance(frac, int):
                raise ConfigError(
                    'per_network policy requires integer fraction_bits (or "auto")'
                )
            return QuantizationScheme.per_network(width, frac)
        if policy == "per_layer":
            activations = section.get("activations", "calibration")
            if activations == "calibration":
                return QuantizationScheme.per_layer(width)
            if activations == "manual":
                manual = section.get("manual_bits", section.get("manual_fraction_bits"))
                if manual is None:
                    raise ConfigError("manual activations require manual_fraction_bits")
                return QuantizationScheme.per_layer(width, manual_frac=manual)
            raise ConfigError(f"unknown activations source {activations!r}")
        raise ConfigError(f"unknown quantization policy {policy!r}")

    def calibration_samples(self):
        section = self.config.get("quantization", {})
        path = section.get("calibration")
        if path is None:
            return None
        with open(self.path(path), "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list) or not data:
            raise ConfigError("calibration file must be a non-empty JSON array of tensors")
        return [np.asarray(sample, dtype=np.float64) for sample in data]

    def dataset(self):
        section = self.config.get("evaluation", {})
        path = section.get("dataset")
        if path is None:
            raise ConfigError("config is missing [evaluation] dataset")
        with open(self.path(path), "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or "inputs" not in data:
            raise ConfigError("dataset file must be a JSON object with 'inputs'")
        inputs = [np.asarray(sample, dtype=np.float64) for sample in data["inputs"]]
        labels = data.get("labels")
        return inputs, labels

    def reference_outputs(self):
        section = self.config.get("evaluation", {})
        path = section.get("reference_outputs")
        if path is None:
            return None
        with open(self.path(path), "r", encoding="utf-8") as fh:
            return json.load(fh)


def load_experiment(path: str) -> Experiment:
    try:
        with open(path, "rb") as fh:
            config = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")
    for section in config:
        if section in _IGNORED_SECTIONS:
            print(f"warning: [{section}] section is ignored (training happens elsewhere)",
                  file=sys.stderr)
        elif section not in _KNOWN_SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    return Experiment(config, os.path.dirname(os.path.abspath(path)))


def _load_graph(exp: Experiment):
    graph = model_io.load_model(exp.model_path)
    problems = validate(graph)
    if problems:
        raise ConfigError("model does not validate:\n  " + "\n  ".join(problems))
    return graph


def _prepare(exp: Experiment):
    """Transformed graph plus (optionally) its quantized form per config."""
    graph = transforms.run_pipeline(_load_graph(exp))
    scheme = exp.scheme()
    if scheme is None:
        return graph, None, None
    needs_auto = scheme.policy == "per_network" and scheme.network_frac is None
    needs_calibration = needs_auto or (
        scheme.policy == "per_layer" and scheme.activation_source == "calibration"
    )
    stats = None
    if needs_calibration:
        samples = exp.calibration_samples()
        if samples is None:
            raise ConfigError("this quantization mode requires a calibration file")
        stats = calibrate(graph, samples)
    if needs_auto:
        from .quantizer import derive_network_frac

        scheme = QuantizationScheme.per_network(
            scheme.width, derive_network_frac(graph, stats, scheme.width)
        )
    return graph, quantize_model(graph, scheme, stats), stats


def cmd_inspect(args) -> int:
    if args.config.endswith(".toml"):
        exp = load_experiment(args.config)
        graph = model_io.load_model(exp.model_path)
    else:
        graph = model_io.load_model(args.config)

    shapes = None
    problems = validate(graph)
    if not problems:
        shapes = infer_shapes(graph)
    print(f"{'node':<16} {'kind':<10} {'shape':<12} {'params':<8} inputs")
    for node_id in topo_order(graph):
        node = graph.nodes[node_id]
        shape = f"{shapes[node_id].channels}x{shapes[node_id].samples}" if shapes else "?"
        params = sum(arr.size for arr in node.weights.values())
        print(f"{node_id:<16} {node.kind:<10} {shape:<12} {params:<8} {', '.join(node.inputs)}")
    print(f"total parameters: {parameter_count(graph)}")
    if problems:
        print("validation problems:")
        for line in problems:
            print(f"  {line}")
        return 1
    return 0


def cmd_transform(args) -> int:
    exp = load_experiment(args.config)
    graph = transforms.run_pipeline(_load_graph(exp))
    os.makedirs(exp.output_dir, exist_ok=True)
    out_path = os.path.join(exp.output_dir, "model_transformed.json")
    model_io.save_model(graph, out_path)
    print(f"transformed model written to {out_path} ({len(graph.nodes)} nodes)")
    return 0


def cmd_quantize(args) -> int:
    exp = load_experiment(args.config)
    graph, qmodel, _ = _prepare(exp)
    if qmodel is None:
        raise ConfigError("config has no [quantization] section")
    out_dir = os.path.join(exp.output_dir, "quantized")
    archive.save_quantized_model(qmodel, out_dir)
    print(f"quantized model written to {out_dir}")
    print(f"{'node':<16} {'n_w':>4} {'n_x':>4} {'n_y':>4} {'n_b':>4}")
    for node_id in topo_order(graph):
        qi = qmodel.quant[node_id]
        wf = "-" if qi.weight_frac is None else qi.weight_frac
        bf = "-" if qi.bias_frac is None else qi.bias_frac
        print(f"{node_id:<16} {wf:>4} {qi.input_frac:>4} {qi.output_frac:>4} {bf:>4}")
    return 0


def cmd_evaluate(args) -> int:
    exp = load_experiment(args.config)
    graph, qmodel, stats = _prepare(exp)
    inputs, labels = exp.dataset()
    if not inputs:
        raise ConfigError("dataset has no inputs")
    references = exp.reference_outputs()
    scheme = exp.scheme()
    dumped: dict = {}

    for _ in range(max(1, exp.iterations)):
        start = time.perf_counter()
        float_result = interpreter.evaluate(graph, inputs, labels, references)
        elapsed = time.perf_counter() - start
    _print_metrics("float", float_result, elapsed)
    dumped["float"] = [out.reshape(-1).tolist() for out in float_result["outputs"]]

    if qmodel is not None:
        fake_outputs = [
            fake_quantize_forward(graph, scheme, stats, sample) for sample in inputs
        ]
        fake_result = _metrics_from_outputs(fake_outputs, labels, references)
        _print_metrics("fake-quant", fake_result, None)
        dumped["fake_quant"] = [out.reshape(-1).tolist() for out in fake_outputs]

        start = time.perf_counter()
        fixed_result = interpreter.evaluate(qmodel, inputs, labels, references)
        elapsed = time.perf_counter() - start
        _print_metrics("fixed", fixed_result, elapsed)
        dumped["fixed"] = [out.reshape(-1).tolist() for out in fixed_result["outputs"]]

    if args.dump_outputs:
        with open(args.dump_outputs, "w", encoding="utf-8") as fh:
            json.dump(dumped, fh)
            fh.write("\n")
    return 0


def _metrics_from_outputs(outputs, labels, references) -> dict:
    result = {"outputs": outputs}
    if labels is not None:
        hits = sum(
            1 for out, label in zip(outputs, labels) if int(np.argmax(out.reshape(-1))) == label
        )
        result["accuracy"] = hits / len(outputs)
    if references is not None:
        refs = [np.asarray(r, dtype=np.float64).reshape(-1) for r in references]
        diffs = [out.reshape(-1) - ref for out, ref in zip(outputs, refs)]
        result["mse"] = float(np.mean([np.mean(d * d) for d in diffs]))
        result["max_abs_diff"] = float(max(np.max(np.abs(d)) for d in diffs))
    return result


def _print_metrics(label: str, result: dict, elapsed) -> None:
    fields = []
    if "accuracy" in result:
        fields.append(f"accuracy={result['accuracy']:.4f}")
    if "mse" in result:
        fields.append(f"mse={result['mse']:.6g}")
    if "max_abs_diff" in result:
        fields.append(f"max_abs_diff={result['max_abs_diff']:.6g}")
    if elapsed is not None:
        fields.append(f"time={elapsed:.3f}s")
    print(f"{label}: " + " ".join(fields))


def cmd_codegen(args) -> int:
    exp = load_experiment(args.config)
    graph, qmodel, _ = _prepare(exp)
    model = qmodel if qmodel is not None else graph
    shapes = infer_shapes(graph)
    plan = allocator.plan_buffers(graph, shapes)
    bundle = codegen.emit(model, plan)
    out_dir = os.path.join(exp.output_dir, "generated")
    bundle.write_to(out_dir)
    harness = codegen.render_harness(float_mode=qmodel is None)
    with open(os.path.join(out_dir, "main.c"), "w", encoding="utf-8") as fh:
        fh.write(harness)
    with open(os.path.join(out_dir, "plan.json"), "w", encoding="utf-8") as fh:
        json.dump(plan.as_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    width = qmodel.width if qmodel is not None else "float"
    rom = costmodel.rom_bytes(graph, width, mode="deployed")
    ram = allocator.ram_bytes(plan, width)
    for name in sorted(bundle.files):
        print(f"wrote {os.path.join(out_dir, name)}")
    print(f"wrote {os.path.join(out_dir, 'main.c')}")
    print(f"ROM weight bytes (deployed): {rom}")
    print(f"RAM pool bytes: {ram}")
    return 0


def cmd_estimate(args) -> int:
    exp = load_experiment(args.config)
    graph, qmodel, _ = _prepare(exp)
    shapes = infer_shapes(graph)
    plan = allocator.plan_buffers(graph, shapes)
    width = qmodel.width if qmodel is not None else "float"
    ram = allocator.ram_bytes(plan, width)
    report = costmodel.cost_report(graph, width, ram_bytes=ram)
    if args.json:
        print(json.dumps(report.as_dict(), indent=1, sort_keys=True))
        return 0
    print(f"{'node':<16} {'macc':>10} {'add':>8} {'shift':>8} {'maxsat':>8} {'cycles':>10}")
    for node_id in topo_order(graph):
        c = report.per_node[node_id]
        star = "*" if node_id in report.extrapolated else " "
        print(
            f"{node_id:<15}{star} {c.macc:>10} {c.add:>8} {c.shift:>8} {c.maxsat:>8} "
            f"{costmodel.estimate_cycles(c):>10}"
        )
    t = report.total
    print(f"{'total':<16} {t.macc:>10} {t.add:>8} {t.shift:>8} {t.maxsat:>8} "
          f"{report.total_cycles:>10}")
    if report.extrapolated:
        print("* counts extrapolated (kind has no published formula)")
    print(f"ROM weight bytes: {report.rom_bytes}")
    print(f"RAM pool bytes: {report.ram_bytes}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnc",
        description="Quantize 1D convolutional/residual networks and emit portable C99",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print the node table of a model")
    p.add_argument("config", help="model document (.json) or experiment config (.toml)")
    p.set_defaults(func=cmd_inspect)

    for name, func, help_text in (
        ("transform", cmd_transform, "apply graph simplification passes"),
        ("quantize", cmd_quantize, "post-training quantize and write the archive"),
        ("evaluate", cmd_evaluate, "accuracy/MSE for float, fake-quant and fixed paths"),
        ("codegen", cmd_codegen, "emit the C99 inference library"),
        ("estimate", cmd_estimate, "operation counts, cycles, ROM/RAM report"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment config (.toml)")
        if name == "estimate":
            p.add_argument("--json", action="store_true", help="emit the report as JSON")
        if name == "evaluate":
            p.add_argument(
                "--dump-outputs",
                metavar="PATH",
                default=None,
                help="write per-sample outputs of each evaluated path as JSON",
            )
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, VersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
