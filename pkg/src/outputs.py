"""
輸出檔案寫入

所有 CSV 以 RFC-4180 格式寫出（標準函式庫 csv），浮點數以 repr 表示（最短且可完整還原的十進位），
布林值寫成 true/false，遺失封包的延遲欄留空。相同的輸入一定得到位元組完全相同的檔案。
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .simulation import EventLog, Trace
from .tuner import GenerationStats

logger = logging.getLogger(__name__)

TRACE_HEADER = ["t", "r", "y", "u", "e"]
EVENTS_HEADER = ["seq", "channel", "t_send", "delay", "dropped", "discarded_ooo"]
HISTORY_HEADER = ["generation", "best_J", "mean_J", "best_kp", "best_ki"]
SWEEP_HEADER = ["drop_prob", "mean_J", "max_J", "diverged_runs", "mean_drop_rate"]


def format_value(value: Any) -> str:
    """單一欄位的文字表示"""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """
    寫出 CSV 檔

    Returns:
        int: 寫出的資料列數（不含標題列）
    """
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
            count += 1
    logger.debug(f"已寫出 {path}（{count} 列）")
    return count


def write_trace(trace: Trace, path: Path) -> int:
    """trace.csv：t,r,y,u,e"""
    return write_csv(path, TRACE_HEADER, trace.rows())


def write_events(events: EventLog, path: Path) -> int:
    """events.csv：seq,channel,t_send,delay,dropped,discarded_ooo"""
    rows = ((ev.seq, ev.channel_id, ev.t_send, ev.delay, ev.dropped, ev.discarded_ooo) for ev in events)
    return write_csv(path, EVENTS_HEADER, rows)


def write_history(history: List[GenerationStats], path: Path) -> int:
    """history.csv：每一代的最佳與平均成本"""
    rows = ((h.generation, h.best_J, h.mean_J, h.best_kp, h.best_ki) for h in history)
    return write_csv(path, HISTORY_HEADER, rows)


def write_sweep(rows: List[Dict[str, Any]], path: Path) -> int:
    """sweep.csv：不同遺失機率下的成本統計"""
    return write_csv(path, SWEEP_HEADER, ([row[h] for h in SWEEP_HEADER] for row in rows))


def write_json(data: Dict[str, Any], path: Path) -> None:
    """寫出 JSON（鍵排序、縮排 2）"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_trace(path: Path) -> Dict[str, List[float]]:
    """讀回 trace.csv（各欄轉為浮點數）"""
    columns: Dict[str, List[float]] = {h: [] for h in TRACE_HEADER}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            for h in TRACE_HEADER:
                columns[h].append(float(row[h]))
    return columns


def prepare_output_dir(out: Optional[str], default: str) -> Path:
    """建立輸出目錄（未指定時使用 NCS_OUTPUT_DIR）"""
    path = Path(out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path
