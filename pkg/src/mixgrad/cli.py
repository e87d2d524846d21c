"""``mixgrad`` command-line front end.

Commands: estimate, check, variance-sweep, sample, zoo.
Exit codes: 0 success, 1 failed verification, 2 invalid input or config,
3 degenerate-sample rate exceeded, 4 other numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import zoo
from .errors import DegenerateRateError, InvalidInputError, InvalidLossError, MixgradError
from .generic_grad import estimate_loss_grad, estimate_loss_grad_nested, expand_params, pathwise_jacobian
from .losses import LOSS_IDS, make_loss
from .mixture import MixtureModel, model_from_dict, model_to_dict, responsibilities_forward
from .reports import EstimatorReport
from .sampling import UniformDraw, make_rng, sample_ancestral, sample_quantile_transform
from .verify import compare, fd_pathwise, quadrature_fd_grad, score_function_grad
from .weight_grad import weight_grad_trace

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DEGENERATE, EXIT_NUMERIC = 0, 1, 2, 3, 4
ESTIMATORS = ("pathwise", "score", "both", "pathwise-mc")
DEFAULT_PARAMS = ["raw_weights", "weights", "logits", "locations", "log_scales"]


@dataclass
class ExperimentConfig:
    model: MixtureModel
    loss: dict
    estimator: str = "pathwise"
    params: list = field(default_factory=lambda: list(DEFAULT_PARAMS))
    N: int = 100_000
    N_inner: int = 1000
    seed: int | None = None
    output: str | None = None
    format: str = "json"
    workers: int = 1
    z_threshold: float = 3.0
    model_doc: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise InvalidInputError("config must be a JSON object")
        unknown = set(doc) - {f for f in cls.__dataclass_fields__ if f not in ("model_doc",)}
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in doc or "loss" not in doc:
            raise InvalidInputError("config needs 'model' and 'loss'")
        model, model_doc = _resolve_model(doc["model"], base)
        loss = doc["loss"] if isinstance(doc["loss"], dict) else {"id": doc["loss"]}
        make_loss(loss, model.D)
        cfg = cls(model=model, loss=loss, model_doc=model_doc,
                  **{k: v for k, v in doc.items() if k not in ("model", "loss")})
        if cfg.estimator not in ESTIMATORS:
            raise InvalidInputError(f"estimator must be one of {ESTIMATORS}")
        if not isinstance(cfg.N, int) or cfg.N < 1:
            raise InvalidInputError("N must be an integer >= 1")
        if not isinstance(cfg.N_inner, int) or cfg.N_inner < 2:
            raise InvalidInputError("N_inner must be an integer >= 2")
        if cfg.format not in ("json", "csv"):
            raise InvalidInputError("format must be json or csv")
        expand_params(model, cfg.params)
        return cfg

    def echo(self) -> dict:
        doc = {k: v for k, v in asdict(self).items() if k not in ("model", "model_doc")}
        doc["model"] = self.model_doc
        return doc


def _resolve_model(spec, base: Path | None):
    if isinstance(spec, dict):
        return model_from_dict(spec), spec
    if isinstance(spec, str):
        if spec.startswith("zoo:"):
            m = zoo.zoo_model(spec[4:])
            return m, model_to_dict(m)
        path = Path(spec)
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read model {spec!r}: {exc}") from None
        return model_from_dict(doc), doc
    raise InvalidInputError("model must be an inline object, a file path, or 'zoo:<name>'")


def load_config(path: str, overrides: argparse.Namespace) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path!r}: {exc}") from None
    for key in ("seed", "workers", "output", "format"):
        value = getattr(overrides, key, None)
        if value is not None:
            doc[key] = value
    cfg = ExperimentConfig.from_dict(doc, base=Path(path).parent)
    if cfg.seed is None:
        cfg.seed = int(np.random.SeedSequence().entropy % (1 << 63))
    return cfg


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write(text: str, output: str | None) -> None:
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _reports_csv(reports: dict[str, EstimatorReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "label", "mean", "stderr", "variance", "n", "seed"])
    for name, rep in reports.items():
        for lab, m, se, v in zip(rep.labels, rep.mean, rep.stderr, rep.variance):
            w.writerow([name, lab, fmt(m), fmt(se), fmt(v), rep.n, rep.seed])
    return buf.getvalue()


def _score_params(params):
    return [p for p in params if p.kind != "raw_weight"]


def run_estimate(cfg: ExperimentConfig) -> tuple[dict, dict[str, EstimatorReport]]:
    """Run the configured estimators; returns (report document, reports by estimator name).

    Wall times sit in their own top-level key so the rest of the document
    is byte-stable for a fixed seed.
    """
    loss = make_loss(cfg.loss, cfg.model.D)
    params = expand_params(cfg.model, cfg.params)
    reports: dict[str, EstimatorReport] = {}
    if cfg.estimator in ("pathwise", "both"):
        reports["pathwise"] = estimate_loss_grad(cfg.model, loss, params, cfg.N, cfg.seed, workers=cfg.workers)
    if cfg.estimator == "pathwise-mc":
        reports["pathwise-mc"] = estimate_loss_grad_nested(
            cfg.model, loss, params, cfg.N, cfg.N_inner, cfg.seed, workers=cfg.workers
        )
    if cfg.estimator in ("score", "both"):
        reports["score"] = score_function_grad(
            cfg.model, loss, _score_params(params), cfg.N, cfg.seed, workers=cfg.workers
        )
    doc = {"command": "estimate", "config": cfg.echo(), "reports": {}, "wall_time": {}}
    for name, rep in reports.items():
        doc["reports"][name] = rep.to_dict(include_wall_time=False)
        doc["wall_time"][name] = rep.wall_time
    if cfg.estimator == "both":
        labels = [p.label for p in _score_params(params)]
        cmp = compare(reports["pathwise"].select(labels), reports["score"], cfg.z_threshold, name="pathwise-vs-score")
        doc["comparison"] = cmp.to_dict()
    return doc, reports


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, args)
    print(f"seed: {cfg.seed}", file=sys.stderr)
    doc, reports = run_estimate(cfg)
    if cfg.format == "csv":
        _write(_reports_csv(reports), cfg.output)
    else:
        _write(json.dumps(doc, indent=2) + "\n", cfg.output)
    if args.trace_out:
        write_trace(cfg.model, cfg.seed, args.trace_samples, args.trace_out)
    return EXIT_OK


def write_trace(model: MixtureModel, seed: int, n: int, path: str) -> None:
    """Export x, responsibilities and weight derivatives for the first ``n`` samples of the seed's stream."""
    x = sample_ancestral(model, make_rng(seed, 0), n)
    wg = weight_grad_trace(model, x)
    trace = responsibilities_forward(model, x)
    samples = [
        {"x": x[i].tolist(), "p": trace.resp[i].tolist(), "dx_dpi": wg.dx_dpi[i].tolist(),
         "dlogp_dpi": wg.dlogp_dpi[i].tolist()}
        for i in range(n)
    ]
    Path(path).write_text(json.dumps({"seed": seed, "model": model_to_dict(model), "samples": samples}) + "\n")


def fd_check(model: MixtureModel, n_draws: int, seed: int, rtol: float = 1e-4, atol: float = 1e-8,
             params=("logits", "locations", "log_scales"), corrupt_sign: bool = False):
    """Analytic per-sample Jacobian vs common-random-number central differences.

    Returns (max normalized error, worst label); a value <= 1 means every
    entry satisfies |a - b| <= atol + rtol * max(|a|, |b|).
    """
    params = expand_params(model, params)
    u = UniformDraw.draw(model.D, seed, n=n_draws).u
    x = sample_quantile_transform(model, u)
    J = pathwise_jacobian(model, x, params)
    if corrupt_sign:
        J = -J
    worst, worst_label = 0.0, ""
    for i, p in enumerate(params):
        fd = fd_pathwise(model, u, p)
        a = J[..., i]
        err = np.abs(a - fd) / (atol + rtol * np.maximum(np.abs(a), np.abs(fd)))
        if err.max() > worst:
            worst, worst_label = float(err.max()), p.label
    return worst, worst_label


def cmd_check(args) -> int:
    names = zoo.select(args.zoo)
    losses = args.losses.split(",")
    for lid in losses:
        if lid not in LOSS_IDS:
            raise InvalidInputError(f"unknown loss {lid!r}")
    results = []
    stat_cmps = []
    failures = []
    for name in names:
        model = zoo.zoo_model(name)
        worst, label = fd_check(model, args.fd_draws, args.seed, corrupt_sign=args.corrupt_sign)
        ok = worst <= 1.0
        results.append({"model": name, "check": "finite-difference", "passed": ok, "max_normalized_error": worst,
                        "worst": label})
        if not ok:
            failures.append(f"{name}: finite-difference {label} normalized error {worst:.3g}")
        for lid in losses:
            loss = make_loss(lid, model.D)
            params = expand_params(model, ["weights", "logits", "locations", "log_scales"])
            pw = estimate_loss_grad(model, loss, params, args.N, args.seed)
            if args.corrupt_sign:
                pw.mean = -pw.mean
            sc = score_function_grad(model, loss, params, args.N, args.seed + 1)
            cmp = compare(pw, sc, args.z, name=f"{name}/{lid}/score")
            stat_cmps.append(cmp)
            if model.D <= 2:
                oracle = quadrature_fd_grad(model, loss, params)
                stat_cmps.append(compare(pw, oracle, args.z, name=f"{name}/{lid}/quadrature"))
    n_coords = sum(c.z.size for c in stat_cmps)
    n_fail = sum(c.n_fail for c in stat_cmps)
    allowed = int(args.fail_budget * n_coords)
    for c in stat_cmps:
        results.append({"check": c.name, **c.to_dict()})
    if n_fail > allowed:
        failures.extend(f"{c.name}: {', '.join(c.failures())}" for c in stat_cmps if c.n_fail)
    summary = {"command": "check", "models": names, "n_coordinates": n_coords, "n_beyond_threshold": n_fail,
               "allowed_beyond_threshold": allowed, "passed": not failures, "failures": failures,
               "results": results}
    _write(json.dumps(summary, indent=2) + "\n", args.output)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    print(f"{'PASS' if not failures else 'FAIL'}: {len(names)} models, {n_fail}/{n_coords} statistical "
          f"coordinates beyond z={args.z} (allowed {allowed})", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_FAIL


def variance_sweep(cfg: ExperimentConfig, n_list: list[int]) -> str:
    if not n_list or any(n < 1 for n in n_list) or sorted(n_list) != list(n_list):
        raise InvalidInputError("N list must be non-empty, positive and ascending")
    loss = make_loss(cfg.loss, cfg.model.D)
    params = _score_params(expand_params(cfg.model, cfg.params))
    labels = [p.label for p in params]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "N"] + [f"mean:{lab}" for lab in labels] + [f"se:{lab}" for lab in labels])
    for n in n_list:
        for name, rep in (
            ("pathwise", estimate_loss_grad(cfg.model, loss, params, n, cfg.seed, workers=cfg.workers)),
            ("score", score_function_grad(cfg.model, loss, params, n, cfg.seed, workers=cfg.workers)),
        ):
            w.writerow([name, n] + [fmt(v) for v in rep.mean] + [fmt(v) for v in rep.stderr])
    return buf.getvalue()


def cmd_variance_sweep(args) -> int:
    cfg = load_config(args.config, args)
    print(f"seed: {cfg.seed}", file=sys.stderr)
    try:
        n_list = [int(float(s)) for s in args.n_list.split(",") if s.strip()]
    except ValueError:
        raise InvalidInputError(f"cannot parse N list {args.n_list!r}") from None
    _write(variance_sweep(cfg, n_list), cfg.output)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.config:
        cfg = load_config(args.config, args)
        model, seed = cfg.model, cfg.seed
    elif args.model:
        model, _ = _resolve_model(args.model, None)
        seed = args.seed if args.seed is not None else int(np.random.SeedSequence().entropy % (1 << 63))
    else:
        raise InvalidInputError("sample needs --config or --model")
    print(f"seed: {seed}", file=sys.stderr)
    if args.n < 1:
        raise InvalidInputError("-n must be >= 1")
    if args.method == "ancestral":
        x = sample_ancestral(model, make_rng(seed), args.n)
    else:
        x = sample_quantile_transform(model, UniformDraw.draw(model.D, seed, n=args.n))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{d}" for d in range(model.D)])
    w.writerows([fmt(v) for v in row] for row in x)
    _write(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_zoo(args) -> int:
    if args.name:
        _write(json.dumps(model_to_dict(zoo.zoo_model(args.name)), indent=2) + "\n", args.output)
    else:
        _write("\n".join(zoo.zoo_names()) + "\n", args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixgrad", description="Pathwise gradients through mixture densities.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("-c", "--config", required=config_required, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("-o", "--output", default=None)
        p.add_argument("--format", choices=("json", "csv"), default=None)

    p = sub.add_parser("estimate", help="run the configured gradient estimators")
    common(p)
    p.add_argument("--trace-out", default=None, help="write a per-sample recursion trace JSON here")
    p.add_argument("--trace-samples", type=int, default=10)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("check", help="verify the zoo against finite-difference, quadrature and score oracles")
    p.add_argument("--zoo", default="all", help="comma-separated glob patterns over zoo names, or 'all'")
    p.add_argument("--z", type=float, default=3.0)
    p.add_argument("-N", type=int, default=100_000)
    p.add_argument("--fd-draws", type=int, default=10)
    p.add_argument("--losses", default="linear,quadratic,bounded-poly")
    p.add_argument("--fail-budget", type=float, default=0.01,
                   help="fraction of statistical coordinates allowed beyond the z threshold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--corrupt-sign", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("variance-sweep", help="standard errors of both estimators across sample sizes")
    common(p)
    p.add_argument("--n-list", default="100,10000,1000000")
    p.set_defaults(func=cmd_variance_sweep)

    p = sub.add_parser("sample", help="draw samples as CSV")
    common(p, config_required=False)
    p.add_argument("--model", default=None, help="model JSON path or zoo:<name>")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--method", choices=("ancestral", "quantile"), default="ancestral")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("zoo", help="list zoo models or export one as model JSON")
    p.add_argument("name", nargs="?")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_zoo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, InvalidLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateRateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except MixgradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
