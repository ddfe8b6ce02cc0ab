"""Command-line entry point: ``sbse {schedule,sample,loss,rank,toy}``.

Exit codes: 0 success, 2 invalid flags or configuration, 3 I/O failure,
audio format/sample-rate mismatch, or a non-finite sampler state.

A JSON config file (``--config`` or ``$SBSE_CONFIG``) may set any option of
the chosen subcommand by its long-flag name with dashes as underscores;
config values take precedence over flags, and unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from sbse import bridge, dsp, losses, rank, schedules, toy
from sbse.baselines import OuveParams, flow_euler_sample, rfm_velocity_target, sgm_sample
from sbse.bridge import NonFiniteStateError, SamplerConfig
from sbse.streams import make_rng

SCHEMA = 1
CONFIG_ENV = "SBSE_CONFIG"
SAMPLERS = ("sb-sde", "sb-ode", "sgm", "rfm", "otfm")


class UsageError(ValueError):
    pass


# -- helpers -----------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    if path is None or str(path) == "-":
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue())


def _emit_json(obj, path=None) -> None:
    text = json.dumps({"schema": SCHEMA, **obj}, indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    print(text)


def _schedule_from(args) -> schedules.ScheduleParams:
    return schedules.ScheduleParams.default(args.kind, beta0=args.beta0, beta1=args.beta1, c=args.c, k=args.k)


def _add_schedule_flags(p) -> None:
    p.add_argument("--kind", choices=schedules.KINDS, default="gmax")
    p.add_argument("--beta0", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--k", type=float, default=None)


def _add_toy_flags(p) -> None:
    d = toy.ToyModel()
    p.add_argument("--toy-mu0", type=float, default=d.mu0)
    p.add_argument("--toy-s0", type=float, default=d.s0)
    p.add_argument("--toy-a", type=float, default=d.a)
    p.add_argument("--toy-b", type=float, default=d.b)
    p.add_argument("--toy-sn", type=float, default=d.sn)


def _toy_from(args) -> toy.ToyModel:
    return toy.ToyModel(args.toy_mu0, args.toy_s0, args.toy_a, args.toy_b, args.toy_sn)


def _add_ouve_flags(p) -> None:
    d = OuveParams()
    p.add_argument("--ouve-gamma", type=float, default=d.gamma)
    p.add_argument("--ouve-sigma-min", type=float, default=d.sigma_min)
    p.add_argument("--ouve-sigma-max", type=float, default=d.sigma_max)
    p.add_argument("--ouve-corrector-snr", type=float, default=d.corrector_snr)
    p.add_argument("--ouve-n-corrector", type=int, default=d.n_corrector)
    p.add_argument("--ouve-t-eps", type=float, default=d.t_eps)


def _ouve_from(args) -> OuveParams:
    return OuveParams(
        gamma=args.ouve_gamma,
        sigma_min=args.ouve_sigma_min,
        sigma_max=args.ouve_sigma_max,
        n_corrector=args.ouve_n_corrector,
        corrector_snr=args.ouve_corrector_snr,
        t_eps=args.ouve_t_eps,
    )


# -- schedule ----------------------------------------------------------------


def cmd_schedule(args) -> int:
    params = _schedule_from(args)
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    tab = schedules.table(params, args.steps)
    _write_csv(args.out, ["t", "f", "g2", "alpha", "alpha_bar", "sigma2", "sigma_bar2"], tab.tolist())
    return 0


# -- sample ------------------------------------------------------------------


def _read_state_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise dsp.AudioFormatError(f"{path}: ragged or empty state CSV")
    return header, data


def _load_state(path, sample_rate, stft_cfg):
    """Returns ``(x1, writer)`` where ``writer(state, out_path)`` stores a result."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        wave = dsp.read_wav(path, expected_rate=sample_rate)
        spec = dsp.stft(wave.samples, stft_cfg)
        n = len(wave.samples)

        def write(state, out, fmt="float32"):
            samples = dsp.istft(state, stft_cfg, length=n)
            dsp.write_wav(out, dsp.Waveform(samples, wave.sample_rate), fmt)

        return spec, write
    if path.suffix.lower() == ".csv":
        header, data = _read_state_csv(path)

        def write(state, out, fmt=None):
            _write_csv(out, header, np.real(state).tolist())

        return data, write
    raise dsp.AudioFormatError(f"{path}: expected a .wav or .csv input")


def _make_denoiser(choice: str, args, x1, sample_rate, stft_cfg, sched):
    if choice == "identity":
        return lambda x_t, x_1, t: np.array(x_t)
    if choice.startswith("constant:"):
        try:
            value = float(choice.split(":", 1)[1])
        except ValueError as exc:
            raise UsageError(f"bad constant denoiser {choice!r}") from exc
        return lambda x_t, x_1, t: np.full_like(x_t, value)
    if choice == "toy-oracle":
        if np.iscomplexobj(x1):
            raise UsageError("toy-oracle is only defined for real CSV states")
        return toy.ExactDenoiser(_toy_from(args), sched)
    if choice.startswith("file:"):
        fixed, _ = _load_state(choice.split(":", 1)[1], sample_rate, stft_cfg)
        if fixed.shape != np.shape(x1):
            raise UsageError(f"precomputed estimate has shape {fixed.shape}, input has {np.shape(x1)}")
        return lambda x_t, x_1, t: fixed.astype(np.result_type(fixed, x_t), copy=True)
    raise UsageError(f"unknown denoiser {choice!r}")


def _flow_path_oracle(model: toy.ToyModel):
    """Posterior mean of ``x0`` on the straight path ``(1 - t) x0 + t y``."""

    def den(x_t, y, t):
        if t >= 1.0:
            return np.broadcast_to(model.posterior_mean(y), np.shape(x_t)).copy()
        return (np.asarray(x_t) - t * np.asarray(y)) / (1.0 - t)

    return den


def cmd_sample(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    sched = _schedule_from(args)
    family = args.sampler.replace("-", "_")
    cfg = SamplerConfig(
        schedule=sched,
        n_steps=args.steps,
        t_min=args.t_min,
        seed=args.seed,
        family=family if family in bridge.FAMILIES else "sb_sde",
    )
    ouve = _ouve_from(args)
    stft_cfg = dsp.StftConfig(args.n_fft, args.hop)
    if args.output is None:
        raise UsageError("--output is required")
    x1, write = _load_state(args.input, args.sample_rate, stft_cfg)
    if args.sampler in ("rfm", "otfm") and args.denoiser == "toy-oracle":
        den = _flow_path_oracle(_toy_from(args))
    else:
        den = _make_denoiser(args.denoiser, args, x1, args.sample_rate, stft_cfg, sched)
    rng = make_rng(args.seed)
    start = time.perf_counter()
    if family in bridge.FAMILIES:
        out = bridge.sample(cfg, den, x1, rng)
    elif family == "sgm":
        if args.denoiser == "toy-oracle":
            score = toy.exact_ouve_score(_toy_from(args), ouve)
        else:

            def score(x, y, t):
                return -(x - ouve.mean(den(x, y, t), y, t)) / ouve.variance(t)

        out = sgm_sample(ouve, score, x1, args.steps, rng)
    else:
        out = flow_euler_sample(lambda t, x: rfm_velocity_target(x, den(x, x1, t), t), x1, args.steps)
    wall = time.perf_counter() - start
    write(out, args.output, args.wav_format)
    _emit_json(
        {
            "command": "sample",
            "sampler": args.sampler,
            "N": args.steps,
            "seed": args.seed,
            "schedule": sched.kind,
            "denoiser": args.denoiser,
            "output": str(args.output),
            "wall_time": wall,
        }
    )
    return 0


# -- loss --------------------------------------------------------------------


def cmd_loss(args) -> int:
    weights = losses.LossWeights(args.lambda_mel, args.lambda_p, args.lambda_g, args.lambda_fm)
    ref = dsp.read_wav(args.ref, expected_rate=args.sample_rate)
    est = dsp.read_wav(args.est, expected_rate=args.sample_rate)
    if len(ref.samples) != len(est.samples):
        raise UsageError(f"length mismatch: ref {len(ref.samples)} vs est {len(est.samples)}")
    rep = losses.full_report(est.samples, ref.samples, args.sample_rate, weights, args.mel_mode)
    _emit_json(
        {
            "command": "loss",
            "components": rep.components,
            "weights": vars(weights),
            "mel_mode": args.mel_mode,
            "total": rep.total,
        },
        args.out,
    )
    return 0


# -- rank --------------------------------------------------------------------


def _wav_list(args) -> list[Path]:
    if args.dir is not None and args.files:
        raise UsageError("give either --dir or --files, not both")
    if args.dir is not None:
        files = sorted(Path(args.dir).glob("*.wav"))
    elif args.files:
        files = [Path(f) for f in args.files]
    else:
        raise UsageError("rank needs --dir or --files")
    return files


def cmd_rank(args) -> int:
    cfg = rank.RankConfig(eta=args.eta, n_fft=args.n_fft, hop=args.hop)
    files = _wav_list(args)
    if args.ref_dir is not None:
        refs = [Path(args.ref_dir) / f.name for f in files]
        missing = [str(r) for r in refs if not r.exists()]
        if missing:
            raise FileNotFoundError(f"reference files missing: {missing}")
    ranks = [rank.rank_of_wave(dsp.read_wav(f, args.sample_rate).samples, cfg) for f in files]
    rows = [[f.name, r] for f, r in zip(files, ranks)]
    summary = {"command": "rank", "eta": cfg.eta, "n_files": len(files)}
    if args.ref_dir is not None:
        ref_ranks = [rank.rank_of_wave(dsp.read_wav(r, args.sample_rate).samples, cfg) for r in refs]
        report = rank.RankReport(ranks, ref_ranks)
        rows = [[f.name, r, rr, d] for f, r, rr, d in zip(files, ranks, ref_ranks, report.differences)]
        _write_csv(args.out, ["file", "rank", "reference_rank", "difference"], rows)
        summary["differences"] = report.summary()
    else:
        _write_csv(args.out, ["file", "rank"], rows)
    _emit_json(summary, args.summary)
    return 0


# -- toy ---------------------------------------------------------------------


def cmd_toy(args) -> int:
    model = _toy_from(args)
    sched = _schedule_from(args)
    if args.experiment == "convergence":
        steps = [int(s) for s in args.steps_list.split(",")]
        families = tuple(f.strip().replace("-", "_") for f in args.families.split(","))
        bad = [f for f in families if f not in toy.CONVERGENCE_FAMILIES]
        if bad or any(s < 1 for s in steps):
            raise UsageError(f"bad families {bad} or step counts {steps}")
        rows = toy.convergence_experiment(
            steps, families, args.trajectories, args.seed, model, sched, _ouve_from(args), args.x1
        )
        _write_csv(
            args.out,
            ["family", "N", "mean_err", "var_err", "wall_time"],
            [[r["family"], r["N"], r["mean_err"], r["var_err"], r["wall_time"]] for r in rows],
        )
        if args.out is not None:
            _emit_json({"command": "toy", "experiment": "convergence", "rows": len(rows)})
        return 0
    if args.experiment == "train":
        den, hist = toy.train(model, sched, args.train_steps, args.batch_size, args.lr, args.seed)
        floor = toy.bayes_floor(model, sched)
        achieved = toy.evaluate_mse(den, model, sched, args.eval_samples, make_rng(args.seed, stream=1))
        _emit_json(
            {
                "command": "toy",
                "experiment": "train",
                "steps": args.train_steps,
                "final_batch_loss": hist[-1],
                "eval_mse": achieved,
                "bayes_floor": floor,
                "ratio": achieved / floor,
                "weights": den.weights.tolist(),
                "bias": den.bias.tolist(),
            },
            args.out,
        )
        return 0
    worst = toy.oracle_check(args.cases, args.seed)
    _emit_json(
        {"command": "toy", "experiment": "oracle-check", "cases": args.cases, "max_residual": worst, "passed": worst < 1e-8},
        args.out,
    )
    return 0


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sbse", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help=f"JSON config file (default ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("schedule", help="dump schedule coefficients as CSV")
    _add_schedule_flags(p)
    p.add_argument("--steps", type=int, default=11, help="number of grid points on [0, 1]")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("sample", help="run a sampler on a WAV or CSV state")
    p.add_argument("--sampler", choices=SAMPLERS, default="sb-sde")
    _add_schedule_flags(p)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-min", type=float, default=1e-4)
    p.add_argument("--denoiser", default="identity", help="identity | constant:<v> | toy-oracle | file:<path>")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--sample-rate", type=int, default=dsp.DEFAULT_SAMPLE_RATE)
    p.add_argument("--n-fft", type=int, default=1024)
    p.add_argument("--hop", type=int, default=256)
    p.add_argument("--wav-format", choices=("float32", "pcm16"), default="float32")
    _add_toy_flags(p)
    _add_ouve_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("loss", help="evaluate the loss suite between two WAVs")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--sample-rate", type=int, default=dsp.DEFAULT_SAMPLE_RATE)
    p.add_argument("--mel-mode", choices=("multi", "single"), default="multi")
    w = losses.LossWeights()
    p.add_argument("--lambda-mel", type=float, default=w.lambda_mel)
    p.add_argument("--lambda-p", type=float, default=w.lambda_p)
    p.add_argument("--lambda-g", type=float, default=w.lambda_g)
    p.add_argument("--lambda-fm", type=float, default=w.lambda_fm)
    p.add_argument("--out", default=None, help="JSON report path")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("rank", help="thresholded spectrogram rank of WAV files")
    p.add_argument("--dir", default=None)
    p.add_argument("--files", nargs="*", default=None)
    p.add_argument("--ref-dir", default=None, help="directory of same-named reference WAVs")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--n-fft", type=int, default=512)
    p.add_argument("--hop", type=int, default=256)
    p.add_argument("--sample-rate", type=int, default=dsp.DEFAULT_SAMPLE_RATE)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.add_argument("--summary", default=None, help="JSON summary path")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("toy", help="linear-Gaussian toy experiments")
    p.add_argument("--experiment", choices=("convergence", "train", "oracle-check"), default="convergence")
    _add_schedule_flags(p)
    _add_toy_flags(p)
    _add_ouve_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps-list", default="1,2,4,8,16,32")
    p.add_argument("--families", default="sb_sde,sb_ode,sgm")
    p.add_argument("--trajectories", type=int, default=10_000)
    p.add_argument("--x1", type=float, default=1.3, help="observation the conditional samplers condition on")
    p.add_argument("--train-steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--eval-samples", type=int, default=200_000)
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_toy)
    return parser


def _apply_config(args) -> None:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        return
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    known = set(vars(args)) - {"func", "command", "config"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys for '{args.command}': {unknown}")
    for key, value in cfg.items():
        setattr(args, key, value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except (OSError, dsp.AudioFormatError, NonFiniteStateError) as exc:
        print(f"sbse: error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"sbse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
