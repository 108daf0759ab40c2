import inspect
import threading
from typing import Callable, Optional

from PySide6.QtCore import QObject, Signal


class WorkerSignals(QObject):
    success = Signal(object)
    error = Signal(str)
    progress = Signal(int, str)


def start_worker(fn: Callable, signals: WorkerSignals) -> threading.Thread:
    """Run fn on a daemon thread; fn may take a progress(pct, text) callback."""

    def worker() -> None:
        try:
            if len(inspect.signature(fn).parameters) > 0:
                result = fn(lambda p, t: signals.progress.emit(p, t))
            else:
                result = fn()
            signals.success.emit(result)
        except Exception as exc:
            signals.error.emit(str(exc))

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    return thread


def step_progress(emit: Callable[[int, str], None], label: Optional[str] = None) -> Callable[[int, int], None]:
    """Adapt the runner's (step, total) callback to (percent, text), emitting on percent changes only."""
    last = [-1]

    def on_step(step: int, total: int) -> None:
        pct = int(100 * step / max(1, total))
        if pct != last[0]:
            last[0] = pct
            emit(pct, f"{label or 'step'} {step}/{total}")

    return on_step
