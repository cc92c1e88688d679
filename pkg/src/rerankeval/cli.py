"""Command-line entry point: ingest, run, build-dataset, human-eval, and
slate import/export, driven by an INI config plus same-named flag overrides."""

import argparse
import configparser
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import candgen, datasetgen, ingest, metrics, rerank, stats
from .errors import MalformedRow, RerankEvalError, ZeroVariance
from .llm_client import BackendConfig, make_backend

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    ratings: str = ""
    items: str = ""
    run_dir: str = "run"
    slates: str = ""              # external slates JSONL (generator=external)
    out_dir: str = ""             # dataset output dir (defaults to run_dir)

    slate_size: int = 15
    history_limit: int = 10
    bootstraps: int = 3
    cutoffs: tuple = (3, 5, 10)
    sample_count: int = 1000
    seed: int = 0
    n_test: int = 10
    min_history: int = 5
    relevance_threshold: float = 4.0
    history_sample: str = "recent"  # or "random:<seed>"

    generator: str = "random"     # random | mf | knn | external
    inject_positives: int = 5
    mode: str = "none"            # none | zero_shot | trained
    temperature: float = 0.7

    mf_k: int = 32
    mf_epochs: int = 30
    mf_learn_rate: float = 0.005
    mf_reg: float = 0.02
    knn_top_m: int = 50
    knn_min_co_raters: int = 3

    ranking_size: int = 15        # items per training ranking
    offline: bool = False         # dataset build without a backend

    backend: BackendConfig = field(default_factory=BackendConfig)

    def validate(self):
        if self.slate_size < 1 or self.bootstraps < 1 or self.sample_count < 1:
            raise ValueError("counts must be >= 1")
        if any(c < 1 or c > self.slate_size for c in self.cutoffs):
            raise ValueError("cutoffs must be within [1, slate_size]")


_BOOL_KEYS = {"offline"}
_INT_KEYS = {"slate_size", "history_limit", "bootstraps", "sample_count", "seed",
             "n_test", "min_history", "inject_positives", "mf_k", "mf_epochs",
             "knn_top_m", "knn_min_co_raters", "ranking_size"}
_FLOAT_KEYS = {"relevance_threshold", "temperature", "mf_learn_rate", "mf_reg"}
_BACKEND_INT = {"max_retries", "max_concurrent_requests"}
_BACKEND_FLOAT = {"timeout", "backoff_base"}


def load_config(path=None, overrides=None):
    """Read the INI config (any section layout; keys are flat) and apply
    CLI overrides."""
    values = {}
    backend_values = {}
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(path)
        for section in parser.sections():
            for key, val in parser.items(section):
                if section == "backend":
                    backend_values[key] = val
                else:
                    values[key] = val
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key.startswith("backend_"):
            backend_values[key[len("backend_"):]] = val
        else:
            values[key] = val

    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    for key, val in values.items():
        if key not in known:
            raise ValueError(f"unknown config key: {key}")
        if key == "cutoffs":
            val = tuple(int(c) for c in str(val).replace(",", " ").split())
        elif key in _BOOL_KEYS:
            val = str(val).lower() in ("1", "true", "yes")
        elif key in _INT_KEYS:
            val = int(val)
        elif key in _FLOAT_KEYS:
            val = float(val)
        setattr(cfg, key, val)

    bkw = {}
    for key, val in backend_values.items():
        if key in _BACKEND_INT:
            val = int(val)
        elif key in _BACKEND_FLOAT:
            val = float(val)
        bkw[key] = val
    if bkw:
        cfg.backend = BackendConfig(**bkw)
    cfg.validate()
    return cfg


def _config_snapshot(cfg):
    snap = {}
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name == "backend":
            val = {bf.name: getattr(val, bf.name) for bf in fields(BackendConfig)}
        elif isinstance(val, tuple):
            val = list(val)
        snap[f.name] = val
    return snap


# --------------------------------------------------------------------------
# Artifact IO
# --------------------------------------------------------------------------

def _write_split(run_dir, split, test_interactions):
    payload = {
        "train": [[r.user, r.item, r.rating, r.timestamp] for r in split.train],
        "test": [[r.user, r.item, r.rating, r.timestamp] for r in test_interactions],
        "relevance": {u: sorted(rs.relevant) for u, rs in sorted(split.relevance.items())},
        "excluded_users": split.excluded_users,
    }
    (run_dir / "split.json").write_text(json.dumps(payload) + "\n", encoding="utf-8")


def _read_split(run_dir):
    payload = json.loads((run_dir / "split.json").read_text(encoding="utf-8"))
    train = [ingest.Interaction(u, i, r, t) for u, i, r, t in payload["train"]]
    test = [ingest.Interaction(u, i, r, t) for u, i, r, t in payload["test"]]
    relevance = {u: ingest.RelevanceSet(user=u, relevant=set(items))
                 for u, items in payload["relevance"].items()}
    return train, test, relevance


def _write_catalog(run_dir, catalog):
    with (run_dir / "catalog.jsonl").open("w", encoding="utf-8") as fh:
        for item_id in sorted(catalog.items):
            c = catalog.items[item_id]
            fh.write(json.dumps({"id": c.id, "title": c.title, "genres": c.genres,
                                 "language": c.language,
                                 "overview": c.overview_short}) + "\n")


def _read_catalog(run_dir):
    return ingest.load_items(run_dir / "catalog.jsonl")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_ingest(cfg):
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    interactions = ingest.load_interactions(cfg.ratings)
    catalog = ingest.load_items(cfg.items)
    for card in catalog.items.values():
        words = card.overview_short.split()
        if len(words) > ingest.OVERVIEW_MAX_WORDS:
            card.overview_short = " ".join(words[:ingest.OVERVIEW_MAX_WORDS])
    split = ingest.split_leave_n_out(interactions, n_test=cfg.n_test,
                                     min_history=cfg.min_history,
                                     threshold=cfg.relevance_threshold)
    test = [r for r in interactions
            if r.user in split.relevance
            and r.item in split.relevance[r.user].relevant]
    _write_split(run_dir, split, test)
    _write_catalog(run_dir, catalog)
    (run_dir / "config.json").write_text(
        json.dumps(_config_snapshot(cfg), indent=2) + "\n", encoding="utf-8")

    users = {r.user for r in interactions}
    print(f"interactions: {len(interactions)}")
    print(f"users: {len(users)}")
    print(f"items: {len(catalog)}")
    print(f"eval users: {len(split.relevance)} (excluded: {split.excluded_users})")
    return EXIT_OK


def _history_strategy(cfg):
    if cfg.history_sample.startswith("random"):
        _, _, s = cfg.history_sample.partition(":")
        return "random", int(s) if s else cfg.seed
    return "recent", None


def _sample_eval_users(relevance, by_user, cfg):
    eligible = sorted(u for u in relevance if u in by_user)
    if len(eligible) > cfg.sample_count:
        rng = np.random.default_rng(candgen.stable_seed(cfg.seed, "eval_users"))
        picks = rng.choice(len(eligible), size=cfg.sample_count, replace=False)
        eligible = sorted(eligible[int(p)] for p in picks)
    return eligible


def _build_slates(cfg, users, by_user, catalog, relevance, train):
    if cfg.generator == "external":
        slates = {s.user: s for s in candgen.import_slates(cfg.slates)}
        return {u: slates[u] for u in users if u in slates}
    out = {}
    scorer = None
    if cfg.generator == "mf":
        scorer = candgen.train_mf(train, k=cfg.mf_k, epochs=cfg.mf_epochs,
                                  learn_rate=cfg.mf_learn_rate, reg=cfg.mf_reg,
                                  seed=cfg.seed)
    elif cfg.generator == "knn":
        sim = candgen.build_item_knn(train, top_m=cfg.knn_top_m,
                                     min_co_raters=cfg.knn_min_co_raters)
        scorer = candgen.ItemKnnRecommender(sim, train)
    elif cfg.generator != "random":
        raise ValueError(f"unknown generator: {cfg.generator}")

    for user in users:
        exclusions = {r.item for r in by_user[user]}
        if cfg.generator == "random":
            slate = candgen.gen_random_slate(user, catalog, exclusions, cfg.seed,
                                             slate_size=cfg.slate_size)
            if cfg.inject_positives > 0:
                slate = _inject_into_random(slate, relevance.get(user), catalog,
                                            exclusions, cfg)
        else:
            slate = candgen.gen_model_slate(
                user, scorer, catalog, exclusions, cfg.inject_positives,
                relevance.get(user), cfg.seed, slate_size=cfg.slate_size,
                source=cfg.generator)
        out[user] = slate
    return out


def _inject_into_random(slate, rel, catalog, exclusions, cfg):
    """Replace a seeded subset of a random slate with held-out positives,
    keeping positions (so the slate stays order-uninformative)."""
    if rel is None:
        return slate
    pool = sorted(i for i in rel.relevant if i in catalog and i not in exclusions
                  and i not in slate.items)
    count = min(cfg.inject_positives, len(pool), len(slate.items))
    if count == 0:
        return slate
    rng = np.random.default_rng(candgen.stable_seed(cfg.seed, "inject", slate.user))
    picks = rng.choice(len(pool), size=count, replace=False)
    # never overwrite a positive already present in the slate
    replaceable = [p for p, item in enumerate(slate.items)
                   if item not in rel.relevant]
    count = min(count, len(replaceable))
    positions = rng.choice(len(replaceable), size=count, replace=False)
    items = list(slate.items)
    for p, pick in zip(positions, picks):
        items[replaceable[int(p)]] = pool[int(pick)]
    return candgen.Slate(user=slate.user, items=items, source=slate.source)


_MODE_COLUMN = {"zero_shot": "zero_shot", "trained": "sft_dpo"}


def cmd_run(cfg):
    run_dir = Path(cfg.run_dir)
    train, _test, relevance = _read_split(run_dir)
    catalog = _read_catalog(run_dir)
    by_user = ingest.train_by_user(train)

    users = _sample_eval_users(relevance, by_user, cfg)
    if not users:
        print("no eligible evaluation users", file=sys.stderr)
        return EXIT_CONFIG
    slates = _build_slates(cfg, users, by_user, catalog, relevance, train)
    skipped = len(users) - len(slates)
    users = sorted(slates)

    baseline_rankings = {u: rerank.none_ranker(slates[u]).items for u in users}
    baseline_results = metrics.evaluate_run(baseline_rankings, relevance, cfg.cutoffs)

    ranked_results = None
    comparison = None
    fallbacks = 0
    if cfg.mode in _MODE_COLUMN:
        backend = make_backend(cfg.backend)
        strategy, hseed = _history_strategy(cfg)
        rankings = {}
        for user in users:
            history = ingest.sample_history(by_user[user], limit=cfg.history_limit,
                                            strategy=strategy, seed=hseed)
            consensus, _outputs = rerank.rerank_user(
                history, slates[user], catalog, backend, k=cfg.bootstraps,
                mode=cfg.mode, seed=cfg.seed, temperature=cfg.temperature)
            if consensus.fallback:
                fallbacks += 1
            rankings[user] = consensus.items
        ranked_results = metrics.evaluate_run(rankings, relevance, cfg.cutoffs)
        comparison = stats.compare_models(ranked_results, baseline_results)
    elif cfg.mode != "none":
        raise ValueError(f"unknown mode: {cfg.mode}")

    _write_report(run_dir, cfg, users, baseline_results, ranked_results,
                  comparison, skipped, fallbacks)
    print(f"evaluated {len(users)} users "
          f"(skipped {skipped}, bootstrap fallbacks {fallbacks})")
    print(f"report written to {run_dir / 'report.json'}")
    return EXIT_PARTIAL if skipped else EXIT_OK


def _write_report(run_dir, cfg, users, baseline_results, ranked_results,
                  comparison, skipped, fallbacks):
    mode_col = _MODE_COLUMN.get(cfg.mode)
    report = {
        "config": _config_snapshot(cfg),
        "users_evaluated": len(users),
        "users_skipped": skipped,
        "bootstrap_fallbacks": fallbacks,
        "non_ranker": metrics.results_to_json(baseline_results),
    }
    if ranked_results is not None:
        report[mode_col] = metrics.results_to_json(ranked_results)
        report["comparison_vs_non"] = {
            f"{m}@{n}": (None if r is None else
                         {"t": r.t_value, "df": r.degrees_of_freedom,
                          "p": r.p_value, "stars": r.significant})
            for (m, n), r in sorted(comparison.items())
        }
    (run_dir / "report.json").write_text(json.dumps(report, indent=2,
                                                    sort_keys=True) + "\n",
                                         encoding="utf-8")

    base = {(r.metric, r.n): r.mean for r in baseline_results}
    ranked = {(r.metric, r.n): r.mean for r in (ranked_results or [])}
    rows = []
    for metric in metrics.METRIC_NAMES:
        for n in cfg.cutoffs:
            key = (metric, n)
            row = {"metric": metric, "n": n,
                   "non_ranker": f"{base[key]:.4f}",
                   "zero_shot": "", "sft_dpo": "",
                   "p_zero_vs_non": "", "p_sft_vs_non": ""}
            if key in ranked:
                row[mode_col] = f"{ranked[key]:.4f}"
                p_col = ("p_zero_vs_non" if mode_col == "zero_shot"
                         else "p_sft_vs_non")
                row[p_col] = stats.render_p(comparison[key])
            rows.append(row)

    header = ["metric", "n", "non_ranker", "zero_shot", "sft_dpo",
              "p_zero_vs_non", "p_sft_vs_non"]
    with (run_dir / "report.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(row[h]) for h in header) + "\n")

    lines = [" | ".join(h.ljust(13) for h in header)]
    for row in rows:
        cells = dict(row)
        values = {c: base[(row["metric"], row["n"])] for c in ("non_ranker",)}
        if (row["metric"], row["n"]) in ranked:
            values[mode_col] = ranked[(row["metric"], row["n"])]
        best = max(values, key=values.get)
        cells[best] = f"**{values[best]:.4f}**"
        lines.append(" | ".join(str(cells[h]).ljust(13) for h in header))
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_build_dataset(cfg):
    run_dir = Path(cfg.run_dir)
    train, test, relevance = _read_split(run_dir)
    catalog = _read_catalog(run_dir)
    by_user = ingest.train_by_user(train)
    test_by_user = {}
    for r in test:
        test_by_user.setdefault(r.user, []).append(r)

    backend = None if cfg.offline else make_backend(cfg.backend)
    users = _sample_eval_users(relevance, by_user, cfg)
    if cfg.ranking_size < 2:
        print("ranking_size must be >= 2 (a 1-item ranking has no rejected "
              "permutation)", file=sys.stderr)
        return EXIT_CONFIG

    strategy, hseed = _history_strategy(cfg)
    samples, pairs = [], []
    dropped = 0
    for user in users:
        history = ingest.sample_history(by_user[user], limit=cfg.history_limit,
                                        strategy=strategy, seed=hseed)
        ranking = datasetgen.correct_ranking_for_user(
            relevance[user], test_by_user.get(user, []), catalog,
            catalog.items, cfg.ranking_size, cfg.seed)
        if len(ranking) < 2:
            dropped += 1
            continue
        try:
            sample = datasetgen.make_positive_sample(backend, history, ranking,
                                                     catalog)
        except RerankEvalError as e:
            log.warning("dropped sample for user %s: %s", user, e)
            dropped += 1
            continue
        samples.append(sample)
        pairs.append(datasetgen.make_dpo_pair(sample, cfg.seed, backend=backend))

    out_dir = Path(cfg.out_dir) if cfg.out_dir else run_dir
    manifest = datasetgen.write_training_files(samples, pairs, out_dir)
    print(f"sft samples: {manifest['sft']['count']}")
    print(f"dpo pairs: {manifest['dpo']['count']}")
    print(f"dropped: {dropped}")
    return EXIT_PARTIAL if dropped else EXIT_OK


def _read_likert(path):
    scores = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(),
                                   start=1):
        line = line.strip()
        if not line:
            continue
        try:
            score = float(line)
        except ValueError:
            raise MalformedRow(line_no, f"not a number: {line!r}") from None
        if not 1.0 <= score <= 5.0:
            raise MalformedRow(line_no, f"score {score} outside [1, 5]")
        scores.append(score)
    return scores


def cmd_human_eval(ratings_a, ratings_b, paired=False):
    a = _read_likert(ratings_a)
    b = _read_likert(ratings_b)
    print(f"mean A: {sum(a) / len(a):.4f}  (n={len(a)})")
    print(f"mean B: {sum(b) / len(b):.4f}  (n={len(b)})")
    try:
        result = stats.paired_t_test(a, b) if paired else stats.two_sample_t_test(a, b)
    except ZeroVariance:
        print("no difference (zero variance)")
        return EXIT_OK
    print(f"t = {result.t_value:.4f}  df = {result.degrees_of_freedom:.2f}  "
          f"p = {result.p_value:.4f} {result.significant}")
    return EXIT_OK


def cmd_export_slates(cfg, out_path):
    run_dir = Path(cfg.run_dir)
    train, _test, relevance = _read_split(run_dir)
    catalog = _read_catalog(run_dir)
    by_user = ingest.train_by_user(train)
    users = _sample_eval_users(relevance, by_user, cfg)
    slates = _build_slates(cfg, users, by_user, catalog, relevance, train)
    candgen.export_slates([slates[u] for u in sorted(slates)], out_path)
    print(f"wrote {len(slates)} slates to {out_path}")
    return EXIT_OK


def cmd_import_slates(cfg, in_path):
    slates = candgen.import_slates(in_path)
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    candgen.export_slates(slates, run_dir / "external_slates.jsonl")
    print(f"imported {len(slates)} slates")
    return EXIT_OK


# --------------------------------------------------------------------------
# argparse wiring
# --------------------------------------------------------------------------

_OVERRIDE_KEYS = [f.name for f in fields(RunConfig) if f.name != "backend"]
_BACKEND_KEYS = [f.name for f in fields(BackendConfig)]


def _add_common(sub):
    sub.add_argument("--config", help="INI config file")
    for key in _OVERRIDE_KEYS:
        sub.add_argument(f"--{key.replace('_', '-')}", dest=key)
    for key in _BACKEND_KEYS:
        sub.add_argument(f"--backend-{key.replace('_', '-')}",
                         dest=f"backend_{key}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rerankeval",
        description="Offline evaluation harness for LLM slate re-ranking")
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    for name in ("ingest", "run", "build-dataset"):
        _add_common(subs.add_parser(name))

    he = subs.add_parser("human-eval")
    he.add_argument("ratings_a")
    he.add_argument("ratings_b")
    he.add_argument("--paired", action="store_true")

    ex = subs.add_parser("export-slates")
    _add_common(ex)
    ex.add_argument("--out", required=True)

    im = subs.add_parser("import-slates")
    _add_common(im)
    im.add_argument("--in", dest="in_path", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "human-eval":
            return cmd_human_eval(args.ratings_a, args.ratings_b, args.paired)
        overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
        overrides.update({f"backend_{k}": getattr(args, f"backend_{k}", None)
                          for k in _BACKEND_KEYS})
        cfg = load_config(args.config, overrides)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "build-dataset":
            return cmd_build_dataset(cfg)
        if args.command == "export-slates":
            return cmd_export_slates(cfg, args.out)
        if args.command == "import-slates":
            return cmd_import_slates(cfg, args.in_path)
        raise ValueError(args.command)
    except (RerankEvalError, OSError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
