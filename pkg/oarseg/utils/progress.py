"""
Progress tracking for oarseg.
"""

from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Dict, List, Optional

from tqdm import tqdm


@dataclass
class ProgressState:
    """Progress state for a task."""
    total: int
    current: int
    status: str
    start_time: datetime
    end_time: Optional[datetime] = None
    errors: List[str] = field(default_factory=list)

    @property
    def percentage(self) -> float:
        """Get progress percentage."""
        return (self.current / self.total) * 100 if self.total > 0 else 0

    @property
    def elapsed_time(self) -> float:
        """Get elapsed time in seconds."""
        end = self.end_time or datetime.now()
        return (end - self.start_time).total_seconds()

    @property
    def is_complete(self) -> bool:
        """Check if task is complete."""
        return self.current >= self.total


class ProgressTracker:
    """Progress tracker for long-running training, inference and sweeps.

    When ``show_bars`` is set, every task also drives a tqdm bar on stderr.
    """

    def __init__(self, show_bars: bool = False):
        """Initialize progress tracker.

        Args:
            show_bars: Render a tqdm bar per task
        """
        self.show_bars = show_bars
        self.tasks: Dict[str, ProgressState] = {}
        self.callbacks: Dict[str, List[Callable[[str, ProgressState], None]]] = {}
        self._bars: Dict[str, tqdm] = {}

    def start_task(self, task_id: str, total: int, status: str = "Starting...") -> str:
        """Start a new task.

        Args:
            task_id: Task identifier
            total: Total number of items
            status: Initial status message

        Returns:
            The task identifier
        """
        self.tasks[task_id] = ProgressState(
            total=total,
            current=0,
            status=status,
            start_time=datetime.now()
        )
        if self.show_bars:
            self._bars[task_id] = tqdm(total=total, desc=task_id, leave=False)
        self._notify_callbacks(task_id)
        return task_id

    def update_task(self, task_id: str, current: Optional[int] = None, status: Optional[str] = None) -> None:
        """Update task progress.

        Args:
            task_id: Task identifier
            current: Current progress
            status: Status message
        """
        if task_id not in self.tasks:
            return
        state = self.tasks[task_id]
        if current is not None:
            bar = self._bars.get(task_id)
            if bar is not None:
                bar.update(current - state.current)
            state.current = current
        if status is not None:
            state.status = status
            bar = self._bars.get(task_id)
            if bar is not None:
                bar.set_postfix_str(status)
        self._notify_callbacks(task_id)

    def advance(self, task_id: str, step: int = 1, status: Optional[str] = None) -> None:
        """Advance a task by ``step`` items."""
        if task_id in self.tasks:
            self.update_task(task_id, self.tasks[task_id].current + step, status)

    def complete_task(self, task_id: str, status: str = "Complete") -> None:
        """Complete a task.

        Args:
            task_id: Task identifier
            status: Completion status message
        """
        if task_id not in self.tasks:
            return
        state = self.tasks[task_id]
        self.update_task(task_id, state.total, status)
        state.end_time = datetime.now()
        bar = self._bars.pop(task_id, None)
        if bar is not None:
            bar.close()
        self._notify_callbacks(task_id)

    def add_error(self, task_id: str, error: str) -> None:
        """Add error to task.

        Args:
            task_id: Task identifier
            error: Error message
        """
        if task_id in self.tasks:
            self.tasks[task_id].errors.append(error)
            self._notify_callbacks(task_id)

    def get_task(self, task_id: str) -> Optional[ProgressState]:
        """Get task state."""
        return self.tasks.get(task_id)

    def register_callback(self, task_id: str, callback: Callable[[str, ProgressState], None]) -> None:
        """Register callback for specific task updates.

        Args:
            task_id: Task identifier
            callback: Callback function taking (task_id, state)
        """
        self.callbacks.setdefault(task_id, []).append(callback)

    def _notify_callbacks(self, task_id: str) -> None:
        """Notify callbacks of task update."""
        state = self.tasks[task_id]
        for callback in self.callbacks.get(task_id, []):
            callback(task_id, state)
