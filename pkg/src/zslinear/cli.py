"""Command-line orchestration: generate, train, evaluate, verify, sweep, export.

One master `seed` drives everything; each module draws from a seed derived by
hashing (seed, purpose), so runs are reproducible end to end and commands can
be re-run piecemeal without disturbing each other. Config files use the same
`key = value` grammar as dataset manifests, and every key can be overridden
with a `--key value` flag; flags win over the file, the file over defaults.

Exit codes: 0 success, 2 validation error, 3 I/O or format error,
4 numerical failure.
"""

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from .data import (
    SynthConfig,
    generate_synthetic,
    load_manifest,
    write_bundle,
)
from .errors import (
    DataFormatError,
    NumericalError,
    ValidationError,
)
from .eval import evaluate_full, evaluate_zsl
from .geometry import (
    CERTIFY_J_TOL,
    EQUALITY_GAP_TOL,
    SUBADDITIVITY_SLACK,
    check_concat_subadditivity,
    verify_global_minimum,
)
from .indicators import (
    EncoderTrainConfig,
    IndicatorEncoder,
    compute_indicator_matrix,
    load_encoder,
    save_encoder,
    train_encoder,
)
from .model import OpCounter, init_model, load_checkpoint, save_checkpoint
from .numerics import nuclear_norm, svd
from .solver import SolverConfig, solve_dual, train_joint

_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"

# (type, default) per config key; flag names replace "_" with "-"
RUN_KEYS = {
    # synthetic generator
    "seen_classes": (_INT, 8),
    "unseen_classes": (_INT, 4),
    "samples_per_class": (_INT, 100),
    "feature_dim": (_INT, 48),
    "subspace_rank": (_INT, 2),
    "semantic_dim": (_INT, 8),
    "noise_sigma": (_FLOAT, 0.01),
    "orthogonal_mode": (_BOOL, True),
    # architecture
    "k_networks": (_INT, 200),
    "k_active": (_INT, 10),
    "latent_dim": (_INT, 0),  # 0 selects 4 * k_networks
    # encoder training
    "enc_epochs": (_INT, 200),
    "enc_learning_rate": (_FLOAT, 1e-2),
    "enc_batch_size": (_INT, 64),
    "enc_tolerance": (_FLOAT, 1e-10),
    # solver (both paths)
    "error_penalty": (_FLOAT, 10.0),
    "epsilon": (_FLOAT, 0.1),
    "lambda_geo": (_FLOAT, 0.1),
    "lambda_orth": (_FLOAT, 1.0),
    "learning_rate": (_FLOAT, 1e-2),
    "epochs": (_INT, 300),
    "dual_tolerance": (_FLOAT, 1e-6),
    "dual_max_passes": (_INT, 10000),
    # orchestration
    "seed": (_INT, 0),
    "out": (_STR, "out"),
    "quiet": (_BOOL, False),
    "manifest": (_STR, ""),
    "checkpoint": (_STR, ""),
    "encoder_dir": (_STR, ""),
    "train_path": (_STR, "primal"),
    "split": (_STR, "test_unseen"),
    "input_space": (_STR, "mapped"),
    "k_list": (_STR, "10,20,30,40,80,120,160,200"),
    "verify_tolerance": (_FLOAT, CERTIFY_J_TOL),
    "subadditivity_pairs": (_INT, 500),
    "equality_pairs": (_INT, 200),
}

COMMANDS = (
    "gen-synth", "train", "eval", "verify", "sweep-k", "export-features",
)


def derive_seed(seed: int, purpose: str) -> int:
    """Stable per-purpose stream key hashed from the master seed."""
    digest = hashlib.blake2b(
        f"{seed}:{purpose}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def _coerce(key, raw):
    kind = RUN_KEYS[key][0]
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _BOOL:
            low = str(raw).strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return str(raw)
    except ValueError:
        raise ValidationError(f"bad value {raw!r} for key {key!r}") from None


def parse_config_file(path) -> dict:
    """Read `key = value` lines; same grammar as a dataset manifest."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        if "=" not in text:
            raise DataFormatError(
                f"{path}: line {lineno}: expected 'key = value'"
            )
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in RUN_KEYS:
            raise ValidationError(f"{path}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValidationError(f"{path}: line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, value)
    return values


class RunConfig:
    """Merged defaults <- config file <- command-line flags."""

    def __init__(self, values: dict):
        for key, (_, default) in RUN_KEYS.items():
            setattr(self, key, values.get(key, default))

    @property
    def h(self) -> int:
        return self.latent_dim if self.latent_dim > 0 else 4 * self.k_networks

    def out_dir(self) -> Path:
        out = Path(self.out)
        out.mkdir(parents=True, exist_ok=True)
        return out

    def say(self, message: str):
        if not self.quiet:
            print(message)

    def encoder_cfg(self) -> EncoderTrainConfig:
        return EncoderTrainConfig(
            epochs=self.enc_epochs,
            learning_rate=self.enc_learning_rate,
            batch_size=self.enc_batch_size,
            seed=derive_seed(self.seed, "encoder"),
            tolerance=self.enc_tolerance,
        )

    def solver_cfg(self) -> SolverConfig:
        return SolverConfig(
            error_penalty=self.error_penalty,
            epsilon=self.epsilon,
            lambda_geo=self.lambda_geo,
            lambda_orth=self.lambda_orth,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=derive_seed(self.seed, "solver"),
            dual_tolerance=self.dual_tolerance,
            dual_max_passes=self.dual_max_passes,
        )

    def load_data(self):
        if not self.manifest:
            raise ValidationError("this command needs --manifest")
        if not Path(self.manifest).exists():
            raise ValidationError(f"manifest not found: {self.manifest}")
        return load_manifest(self.manifest)

    def load_model_parts(self):
        enc_dir = self.encoder_dir or str(Path(self.out) / "encoder")
        model_dir = self.checkpoint or str(Path(self.out) / "model")
        return load_encoder(enc_dir), load_checkpoint(model_dir)


def _write_csv(path: Path, header, rows):
    lines = [header]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_gen_synth(cfg: RunConfig) -> int:
    synth = SynthConfig(
        seen_classes=cfg.seen_classes,
        unseen_classes=cfg.unseen_classes,
        samples_per_class=cfg.samples_per_class,
        feature_dim=cfg.feature_dim,
        subspace_rank=cfg.subspace_rank,
        semantic_dim=cfg.semantic_dim,
        noise_sigma=cfg.noise_sigma,
        orthogonal_mode=cfg.orthogonal_mode,
        seed=derive_seed(cfg.seed, "data"),
    )
    train, test_seen, test_unseen, space = generate_synthetic(synth)
    out = cfg.out_dir()
    write_bundle(out, train, test_seen, test_unseen, space)
    cfg.say(f"wrote {out / 'manifest.txt'}")
    return 0


def _fit_encoder(cfg: RunConfig, train, k_active=None):
    enc = train_encoder(
        train.features, cfg.h, cfg.k_networks, cfg.encoder_cfg(),
        k_active=cfg.k_active if k_active is None else k_active,
    )
    return enc


def cmd_train(cfg: RunConfig) -> int:
    train, _, _, space = cfg.load_data()
    out = cfg.out_dir()
    enc = _fit_encoder(cfg, train)
    save_encoder(enc, out / "encoder")
    if cfg.train_path == "primal":
        seen_mean = space.descriptors[space.seen_ids].mean(axis=0)
        model0 = init_model(
            cfg.k_networks, train.feature_dim, space.semantic_dim,
            cfg.k_active, seed=derive_seed(cfg.seed, "model"),
            descriptor_mean=seen_mean,
        )
        model = train_joint(
            train, space, enc, model0, cfg.solver_cfg(),
            log_path=out / "training_log.csv",
        )
        save_checkpoint(model, out / "model")
        cfg.say(f"wrote {out / 'model'} (validation loss "
                f"{model.validation_loss!r})")
    elif cfg.train_path == "dual":
        sol = solve_dual(train, space, enc, cfg.solver_cfg())
        dual_dir = out / "dual"
        dual_dir.mkdir(parents=True, exist_ok=True)
        from .data import save_matrix

        save_matrix(sol.alpha, dual_dir / "alpha.pmx1")
        save_matrix(sol.alpha_star, dual_dir / "alpha_star.pmx1")
        save_matrix(sol.bias.reshape(1, -1), dual_dir / "bias.pmx1")
        (dual_dir / "meta.txt").write_text(
            f"converged = {str(sol.converged).lower()}\n"
        )
        cfg.say(f"wrote {dual_dir} (converged={sol.converged})")
    else:
        raise ValidationError(
            f"train_path must be 'primal' or 'dual', got {cfg.train_path!r}"
        )
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _, test_seen, test_unseen, space = cfg.load_data()
    enc, model = cfg.load_model_parts()
    report = evaluate_full(model, test_seen, test_unseen, space, enc)
    out = cfg.out_dir()
    (out / "eval_report.csv").write_text(report.to_csv())
    cfg.say(f"zsl_accuracy,{report.zsl_accuracy!r}")
    cfg.say(f"unseen_accuracy,{report.unseen_accuracy!r}")
    cfg.say(f"seen_accuracy,{report.seen_accuracy!r}")
    cfg.say(f"harmonic_mean,{report.harmonic!r}")
    return 0


def _null_space_partner(rng, basis_u, rows, cols):
    """Random matrix whose columns are exactly orthogonal to the basis."""
    raw = rng.uniform(-1.0, 1.0, size=(rows, cols))
    return raw - basis_u @ (basis_u.T @ raw)


def cmd_verify(cfg: RunConfig) -> int:
    if cfg.verify_tolerance <= 0.0:
        raise ValidationError(
            f"verify_tolerance must be positive, got {cfg.verify_tolerance}"
        )
    rng = np.random.Generator(
        np.random.Philox(key=derive_seed(cfg.seed, "verify"))
    )
    rows = []

    worst_gap = -np.inf
    all_ok = True
    for _ in range(cfg.subadditivity_pairs):
        r = int(rng.integers(2, 9))
        m = rng.uniform(-1.0, 1.0, size=(r, int(rng.integers(1, 7))))
        n = rng.uniform(-1.0, 1.0, size=(r, int(rng.integers(1, 7))))
        lhs, rhs, ok = check_concat_subadditivity(m, n)
        worst_gap = max(worst_gap, lhs - rhs)
        all_ok = all_ok and ok
    rows.append((
        "concat_subadditivity", "pass" if all_ok else "fail",
        f"pairs={cfg.subadditivity_pairs};max_gap={worst_gap!r}",
    ))

    worst_eq = 0.0
    eq_ok = True
    for idx in range(cfg.equality_pairs):
        r = int(rng.integers(4, 9))
        c1 = int(rng.integers(1, max(2, r // 2)))
        m = rng.uniform(-1.0, 1.0, size=(r, c1))
        basis = svd(m).u[:, :c1]
        n = _null_space_partner(rng, basis, r, int(rng.integers(1, r - c1 + 1)))
        parts = [m, n]
        if idx % 4 == 0 and r - c1 >= 2:
            # extend to three exactly-orthogonal blocks
            wide = svd(np.hstack([m, n]))
            k = min(m.shape[1] + n.shape[1], r)
            extra = _null_space_partner(rng, wide.u[:, :k], r, 1)
            parts.append(extra)
        gap = sum(nuclear_norm(p) for p in parts) - nuclear_norm(
            np.hstack(parts)
        )
        worst_eq = max(worst_eq, abs(gap))
        eq_ok = eq_ok and abs(gap) <= EQUALITY_GAP_TOL
    rows.append((
        "orthogonal_equality", "pass" if eq_ok else "fail",
        f"pairs={cfg.equality_pairs};max_abs_gap={worst_eq!r}",
    ))

    if cfg.manifest:
        train, _, _, space = cfg.load_data()
        take = min(train.sample_count, 30)
        sub = train.features[:take]
        enc = None
        try:
            enc, model = cfg.load_model_parts()
        except (OSError, DataFormatError):
            model = None
        if enc is not None:
            from .solver import kernel_matrix

            gates = compute_indicator_matrix(enc, sub)
            kmat = kernel_matrix(sub, gates)
            symmetric = bool(np.array_equal(kmat, kmat.T))
            min_eig = float(np.linalg.eigvalsh(kmat).min())
            gram_ok = symmetric and min_eig >= -1e-8
            rows.append((
                "kernel_gram", "pass" if gram_ok else "fail",
                f"n={take};min_eig={min_eig!r};symmetric={symmetric}",
            ))
        if model is not None:
            cert = verify_global_minimum(
                train, model, tol=cfg.verify_tolerance
            )
            if not cert.applicable:
                status = "not_applicable"
            elif cert.certified:
                status = "certified"
            else:
                status = "not_certified"
            rows.append((
                "minimum_certificate", status, f"objective={cert.objective!r}",
            ))
        else:
            rows.append(("minimum_certificate", "skipped", "no checkpoint"))
    else:
        rows.append(("kernel_gram", "skipped", "no manifest"))
        rows.append(("minimum_certificate", "skipped", "no manifest"))

    out = cfg.out_dir()
    _write_csv(out / "verify_report.csv", "check,result,detail", rows)
    for row in rows:
        cfg.say(",".join(row))
    if any(row[1] == "fail" for row in rows):
        raise NumericalError("a structural check failed; see verify_report.csv")
    return 0


def cmd_sweep_k(cfg: RunConfig) -> int:
    train, test_seen, test_unseen, space = cfg.load_data()
    try:
        ks = [int(tok) for tok in cfg.k_list.split(",") if tok.strip()]
    except ValueError:
        raise ValidationError(f"bad k_list {cfg.k_list!r}") from None
    if not ks:
        raise ValidationError("k_list is empty")
    for k in ks:
        if not 1 <= k <= cfg.k_networks:
            raise ValidationError(
                f"swept k={k} outside [1, {cfg.k_networks}]"
            )
    # Encoder weights do not depend on k_active, so fit once and reuse a
    # per-k view for training and evaluation at each sweep point.
    base = _fit_encoder(cfg, train, k_active=ks[0])
    seen_mean = space.descriptors[space.seen_ids].mean(axis=0)
    rows = []
    for k in ks:
        enc = IndicatorEncoder(base.weight, base.k_networks, k)
        model0 = init_model(
            cfg.k_networks, train.feature_dim, space.semantic_dim, k,
            seed=derive_seed(cfg.seed, "model"), descriptor_mean=seen_mean,
        )
        model = train_joint(train, space, enc, model0, cfg.solver_cfg())
        gates = compute_indicator_matrix(enc, test_unseen.features)
        gates_exact = bool(np.all(gates.sum(axis=1) == k))
        counter = OpCounter()
        zsl = evaluate_zsl(model, test_unseen, space, enc, counter=counter)
        report = evaluate_full(model, test_seen, test_unseen, space, enc)
        ops = counter.total / test_unseen.sample_count
        rows.append((
            k, repr(zsl), repr(report.unseen_accuracy),
            repr(report.seen_accuracy), repr(report.harmonic),
            repr(ops), str(gates_exact).lower(),
        ))
    out = cfg.out_dir()
    _write_csv(
        out / "sweep_k.csv",
        "k,zsl_accuracy,unseen_accuracy,seen_accuracy,harmonic_mean,"
        "ops_per_sample,gates_exact",
        rows,
    )
    first, last = float(rows[0][1]), float(rows[-1][1])
    if last < first - 0.05:
        cfg.say(f"note: accuracy at k={ks[-1]} trails k={ks[0]} "
                f"by {first - last:.3f}")
    cfg.say(f"wrote {out / 'sweep_k.csv'}")
    return 0


def cmd_export_features(cfg: RunConfig) -> int:
    train, test_seen, test_unseen, space = cfg.load_data()
    splits = {
        "train": train, "test_seen": test_seen, "test_unseen": test_unseen,
    }
    if cfg.split not in splits:
        raise ValidationError(
            f"split must be one of {sorted(splits)}, got {cfg.split!r}"
        )
    ds = splits[cfg.split]
    if cfg.input_space == "raw":
        mat = ds.features
    elif cfg.input_space == "mapped":
        enc, model = cfg.load_model_parts()
        gates = compute_indicator_matrix(enc, ds.features)
        from .model import forward_batch

        mat = forward_batch(model, ds.features, gates)
    else:
        raise ValidationError(
            f"input_space must be 'raw' or 'mapped', got {cfg.input_space!r}"
        )
    out = cfg.out_dir()
    path = out / f"features_{cfg.split}_{cfg.input_space}.csv"
    header = "id,label," + ",".join(f"c{j}" for j in range(mat.shape[1]))
    rows = (
        (i, int(ds.labels[i]), *(repr(float(v)) for v in mat[i]))
        for i in range(mat.shape[0])
    )
    _write_csv(path, header, rows)
    cfg.say(f"wrote {path}")
    return 0


DISPATCH = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "sweep-k": cmd_sweep_k,
    "export-features": cmd_export_features,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None)
    for key, (kind, _) in RUN_KEYS.items():
        flags = ["--" + key.replace("_", "-")]
        if key == "train_path":
            flags.append("--path")
        if kind == _BOOL:
            # bare flag means true; an explicit value may still follow
            common.add_argument(*flags, dest=key, nargs="?", const="true",
                                default=None)
        else:
            common.add_argument(*flags, dest=key, default=None)
    parser = argparse.ArgumentParser(
        prog="zslinear",
        description="Gated linear zero-shot mapping toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def build_run_config(args) -> RunConfig:
    values = {}
    if args.config is not None:
        values.update(parse_config_file(args.config))
    for key in RUN_KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = _coerce(key, raw)
    return RunConfig(values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_run_config(args)
        return DISPATCH[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
