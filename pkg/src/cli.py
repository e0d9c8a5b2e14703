"""
NCS Testbed 命令列介面

子命令：
- simulate：執行一次網路閉迴路模擬，輸出 trace.csv、events.csv、metrics.json
- tune：以 GA 調整 PI 增益，輸出 gains.json、history.csv
- rt：以 UDP 執行即時節點（--role plant|controller），輸出本地軌跡
- sweep：以設定的增益掃描不同遺失機率，輸出 sweep.csv

結束碼：0 成功、1 配置錯誤、2 迴路發散、3 即時節點同步逾時
"""

import argparse
import dataclasses
import logging
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from .channel import CHANNEL_IDS, channel_stats
from .config import ConfigError, RunConfig, apply_overrides, dump_run_config, get_settings, load_run_config, settings_summary
from .harness import ControllerNode, HandshakeError, PlantNode
from .objective import objective, objective_terms, step_metrics
from .outputs import prepare_output_dir, write_events, write_history, write_json, write_sweep, write_trace
from .rng import derive_seeds
from .simulation import run_closed_loop, run_direct_loop
from .tuner import ga_tune, validation_seeds

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_HANDSHAKE = 3

# derive_seeds 的用途編號（評估與驗證種子分別為 0 與 1）
SWEEP_SEEDS = 2

ROLES = {"plant": "plant_master", "controller": "controller_slave"}


def _load(args: argparse.Namespace) -> RunConfig:
    run_config = load_run_config(args.config)
    role = ROLES[args.role] if getattr(args, "role", None) else None
    return apply_overrides(run_config, seed=args.seed, role=role)


def _with_seed(sim, seed: int):
    return dataclasses.replace(sim, seed=seed)


def cmd_simulate(args: argparse.Namespace) -> int:
    """執行一次閉迴路模擬並寫出軌跡、事件紀錄與指標"""
    run_config = _load(args)
    cfg = run_config.to_domain()
    out = prepare_output_dir(args.out, get_settings().output_dir)
    dump_run_config(run_config, out / "config.json")

    trace, events = run_closed_loop(cfg["plant"], cfg["gains"], cfg["channel"], cfg["sim"])
    write_trace(trace, out / "trace.csv")
    write_events(events, out / "events.csv")

    metrics: Dict[str, Any] = {
        "rows": len(trace),
        "diverged": trace.diverged,
        "t_diverged": trace.t_diverged,
        "J": objective(trace, cfg["weights"]),
        "channels": {cid: dataclasses.asdict(channel_stats(events.for_channel(cid))) for cid in CHANNEL_IDS},
    }
    if len(trace) > 0:
        metrics["step"] = step_metrics(trace).to_dict()

    baseline = run_direct_loop(cfg["plant"], cfg["gains"], cfg["sim"])
    metrics["baseline_J"] = objective(baseline, cfg["weights"])
    if len(baseline) > 0 and not baseline.diverged:
        itae, isco = objective_terms(baseline)
        metrics["baseline_terms"] = {"itae": itae, "isco": isco}
    write_json(metrics, out / "metrics.json")

    logger.info(f"模擬完成：J={metrics['J']:.6g}（無網路基準 {metrics['baseline_J']:.6g}），輸出至 {out}")
    if trace.diverged:
        logger.warning(f"閉迴路在 t={trace.t_diverged} 發散")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_tune(args: argparse.Namespace) -> int:
    """GA 調整增益，並以新種子做樣本外驗證"""
    run_config = _load(args)
    cfg = run_config.to_domain()
    out = prepare_output_dir(args.out, get_settings().output_dir)
    dump_run_config(run_config, out / "config.json")

    result = ga_tune(cfg["plant"], cfg["channel"], cfg["sim"], cfg["weights"], cfg["ga"])
    write_history(result.history, out / "history.csv")

    validation: List[Dict[str, Any]] = []
    for seed in validation_seeds(cfg["ga"]):
        trace, _ = run_closed_loop(cfg["plant"], result.best_gains, cfg["channel"], _with_seed(cfg["sim"], seed))
        validation.append({
            "seed": seed,
            "J": objective(trace, cfg["weights"]),
            "diverged": trace.diverged,
            "final_mean_y": step_metrics(trace).final_mean_y if len(trace) > 0 else None,
        })
    out_of_sample = float(np.mean([v["J"] for v in validation]))

    write_json({
        "kp": result.best_gains.kp,
        "ki": result.best_gains.ki,
        "J_in_sample": result.best_J,
        "J_out_of_sample": out_of_sample,
        "eval_seeds": result.eval_seeds,
        "validation": validation,
    }, out / "gains.json")

    diverged = sum(1 for v in validation if v["diverged"])
    logger.info(f"調整完成：kp={result.best_gains.kp:.6g}, ki={result.best_gains.ki:.6g}, "
                f"樣本內 J={result.best_J:.6g}, 樣本外 J={out_of_sample:.6g}, 驗證發散 {diverged} 次")
    return EXIT_OK


def cmd_rt(args: argparse.Namespace) -> int:
    """執行一個即時節點"""
    run_config = _load(args)
    cfg = run_config.to_domain()
    node_cfg = cfg["node"]
    out = prepare_output_dir(args.out, get_settings().output_dir)
    dump_run_config(run_config, out / "config.json")

    try:
        if node_cfg.role == "plant_master":
            node = PlantNode(node_cfg)
            trace, events = node.run()
            write_events(events, out / "events.csv")
        else:
            node = ControllerNode(node_cfg)
            trace = node.run()
    except HandshakeError as e:
        logger.error(f"即時節點同步失敗: {e}")
        return EXIT_HANDSHAKE
    except OSError as e:
        logger.error(f"無法開啟 UDP 端點 {node_cfg.bind}: {e}")
        return EXIT_CONFIG

    write_trace(trace, out / "trace.csv")
    write_json({"role": node_cfg.role, **dataclasses.asdict(node.stats)}, out / "rt.json")
    if trace.diverged:
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """以目前增益掃描遺失機率，評估強健性"""
    run_config = _load(args)
    cfg = run_config.to_domain()
    out = prepare_output_dir(args.out, get_settings().output_dir)
    dump_run_config(run_config, out / "config.json")

    seeds = derive_seeds(cfg["sim"].seed, run_config.sweep.seeds, SWEEP_SEEDS)
    rows = []
    for drop_prob in run_config.sweep.drop_probs:
        chan_cfg = dataclasses.replace(cfg["channel"], drop_prob=drop_prob)
        costs, rates, diverged = [], [], 0
        for seed in seeds:
            trace, events = run_closed_loop(cfg["plant"], cfg["gains"], chan_cfg, _with_seed(cfg["sim"], seed))
            costs.append(objective(trace, cfg["weights"]))
            rates.append(channel_stats(events).drop_rate)
            diverged += int(trace.diverged)
        rows.append({
            "drop_prob": drop_prob,
            "mean_J": float(np.mean(costs)),
            "max_J": float(np.max(costs)),
            "diverged_runs": diverged,
            "mean_drop_rate": float(np.mean(rates)),
        })
        logger.info(f"drop_prob={drop_prob}: 平均 J={rows[-1]['mean_J']:.6g}，發散 {diverged}/{len(seeds)}")

    write_sweep(rows, out / "sweep.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncs-testbed", description="網路控制系統測試平台")
    parser.add_argument("--log-level", type=str, default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日誌等級（預設 NCS_LOG_LEVEL）")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="JSON 執行配置檔")
        p.add_argument("--seed", type=int, default=None, help="覆寫 sim.seed 與 ga.master_seed")
        p.add_argument("--out", type=str, default=None, help="輸出目錄（預設 NCS_OUTPUT_DIR）")

    ps = sub.add_parser("simulate", help="執行網路閉迴路模擬")
    common(ps)
    ps.set_defaults(func=cmd_simulate)

    pt = sub.add_parser("tune", help="以 GA 調整 PI 增益")
    common(pt)
    pt.set_defaults(func=cmd_tune)

    pr = sub.add_parser("rt", help="執行即時 UDP 節點")
    common(pr)
    pr.add_argument("--role", type=str, choices=sorted(ROLES), default=None, help="節點角色（預設 rt.role）")
    pr.set_defaults(func=cmd_rt)

    pw = sub.add_parser("sweep", help="掃描遺失機率")
    common(pw)
    pw.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=args.log_level or get_settings().log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logger.debug(f"程序設定: {settings_summary()}")

    try:
        return args.func(args)
    except ConfigError as e:
        print(f"配置錯誤 {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
