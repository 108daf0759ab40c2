from pathlib import Path
from typing import List, Optional

from PySide6.QtWidgets import (QComboBox, QFileDialog, QFormLayout, QGroupBox, QHBoxLayout, QHeaderView,
                               QLabel, QLineEdit, QMainWindow, QMessageBox, QProgressBar, QPushButton,
                               QTableWidget, QTableWidgetItem, QVBoxLayout, QWidget)

from app.core.errors import AcceptanceFailure
from app.core.presets import PRESETS
from app.core.runner import RunResult, resolve_config, run
from app.core.stores import HistoryStore, SettingsStore
from app.core.utils import APP_VERSION
from app.ui.components.run_history import RunHistoryWidget
from app.ui.workers import WorkerSignals, start_worker, step_progress

NO_PRESET = "(config file only)"
SERIES_COLUMNS = ("time", "alive_mass", "E", "D_G", "rho_sup", "u_L2", "budget_grad")
SERIES_ROWS = 12


class MainWindow(QMainWindow):
    """Run monitor: picks a preset or config, runs it off the GUI thread, shows the last diagnostics."""

    def __init__(self, settings_store: Optional[SettingsStore] = None) -> None:
        super().__init__()
        self.setWindowTitle(f"VNS half-space monitor {APP_VERSION}")
        self.settings_store = settings_store or SettingsStore()
        self.history_store = HistoryStore(self.settings_store)
        self._workers: List[WorkerSignals] = []
        self._build_ui()
        self._load_settings()
        self._refresh_history_table()

    def _build_ui(self) -> None:
        root = QWidget()
        layout = QVBoxLayout(root)

        run_box = QGroupBox("Run")
        form = QFormLayout(run_box)
        self.preset_combo = QComboBox()
        self.preset_combo.addItems([NO_PRESET] + sorted(PRESETS))
        self.preset_combo.currentTextChanged.connect(self._on_preset_changed)
        form.addRow("Preset", self.preset_combo)
        self.preset_hint = QLabel("")
        self.preset_hint.setWordWrap(True)
        form.addRow("", self.preset_hint)

        config_row = QHBoxLayout()
        self.config_edit = QLineEdit()
        self.config_edit.setPlaceholderText("optional key=value file overriding the preset")
        browse_cfg = QPushButton("Browse…")
        browse_cfg.clicked.connect(self._pick_config)
        config_row.addWidget(self.config_edit)
        config_row.addWidget(browse_cfg)
        form.addRow("Config", config_row)

        out_row = QHBoxLayout()
        self.out_edit = QLineEdit(str(Path.home() / "vns-runs"))
        browse_out = QPushButton("Browse…")
        browse_out.clicked.connect(self._pick_out_dir)
        out_row.addWidget(self.out_edit)
        out_row.addWidget(browse_out)
        form.addRow("Output", out_row)

        controls = QHBoxLayout()
        self.run_btn = QPushButton("Run")
        self.run_btn.clicked.connect(self.start_run)
        self.progress = QProgressBar()
        self.progress.setRange(0, 100)
        controls.addWidget(self.run_btn)
        controls.addWidget(self.progress, 1)
        form.addRow(controls)
        layout.addWidget(run_box)

        diag_box = QGroupBox("Diagnostics (last rows)")
        diag_layout = QVBoxLayout(diag_box)
        self.series_table = QTableWidget(0, len(SERIES_COLUMNS))
        self.series_table.setHorizontalHeaderLabels(list(SERIES_COLUMNS))
        self.series_table.horizontalHeader().setSectionResizeMode(QHeaderView.Stretch)
        self.series_table.setEditTriggers(QTableWidget.NoEditTriggers)
        self.series_table.verticalHeader().setVisible(False)
        diag_layout.addWidget(self.series_table)
        self.checks_label = QLabel("")
        self.checks_label.setWordWrap(True)
        diag_layout.addWidget(self.checks_label)
        layout.addWidget(diag_box, 1)

        self.history_widget = RunHistoryWidget()
        self.history_widget.statusChanged.connect(self.set_status)
        layout.addWidget(self.history_widget, 1)

        self.setCentralWidget(root)
        self.statusBar().showMessage("Ready")
        self.resize(980, 720)

    def set_status(self, text: str) -> None:
        self.statusBar().showMessage(text)

    def _on_preset_changed(self, name: str) -> None:
        preset = PRESETS.get(name)
        self.preset_hint.setText(preset.description if preset else "")

    def _pick_config(self) -> None:
        path, _ = QFileDialog.getOpenFileName(self, "Config file", self.config_edit.text() or str(Path.home()))
        if path:
            self.config_edit.setText(path)

    def _pick_out_dir(self) -> None:
        path = QFileDialog.getExistingDirectory(self, "Output directory", self.out_edit.text())
        if path:
            self.out_edit.setText(path)

    def _load_settings(self) -> None:
        data = self.settings_store.load()
        preset = str(data.get("preset", NO_PRESET))
        if self.preset_combo.findText(preset) >= 0:
            self.preset_combo.setCurrentText(preset)
        self._on_preset_changed(self.preset_combo.currentText())
        self.config_edit.setText(str(data.get("config", "")))
        if data.get("out_dir"):
            self.out_edit.setText(str(data["out_dir"]))

    def save_settings(self) -> None:
        self.settings_store.save({
            "preset": self.preset_combo.currentText(),
            "config": self.config_edit.text().strip(),
            "out_dir": self.out_edit.text().strip(),
        })

    def _refresh_history_table(self) -> None:
        self.history_widget.populate(self.history_store.tail())

    def _set_busy(self, busy: bool) -> None:
        for w in (self.run_btn, self.preset_combo, self.config_edit, self.out_edit):
            w.setEnabled(not busy)

    def _show_series(self, result: RunResult) -> None:
        series = result.series
        names = [c for c in SERIES_COLUMNS if c in series]
        count = min(SERIES_ROWS, len(series))
        self.series_table.setColumnCount(len(names))
        self.series_table.setHorizontalHeaderLabels(names)
        self.series_table.setRowCount(count)
        for i in range(count):
            idx = len(series) - count + i
            for col, name in enumerate(names):
                self.series_table.setItem(i, col, QTableWidgetItem(f"{series[name][idx]:.6g}"))
        lines = [f"{'ok' if c.passed else 'FAILED'}  {c.name}: {c.detail}" for c in result.checks]
        self.checks_label.setText("\n".join(lines))

    def start_run(self) -> None:
        preset_name = self.preset_combo.currentText()
        preset_name = None if preset_name == NO_PRESET else preset_name
        config_path = self.config_edit.text().strip() or None
        out_dir = self.out_edit.text().strip()
        if not out_dir:
            QMessageBox.warning(self, "Output", "Choose an output directory.")
            return
        self.save_settings()

        def task(progress):
            cfg, preset = resolve_config(preset_name, config_path)
            return run(cfg, out_dir, preset, self.history_store,
                       progress=step_progress(progress, preset_name or "run"), enforce_checks=False)

        signals = WorkerSignals()
        self._workers.append(signals)
        self._set_busy(True)
        self.progress.setValue(0)
        self.set_status("Running…")

        def on_progress(pct: int, text: str) -> None:
            self.progress.setValue(pct)
            self.set_status(text)

        def done(result: object) -> None:
            try:
                self._show_series(result)
                if result.passed:
                    self.set_status(f"Done: {result.out_dir}")
                else:
                    self.set_status(str(AcceptanceFailure(result.failed_checks)))
            finally:
                self._finish(signals)

        def failed(msg: str) -> None:
            try:
                QMessageBox.critical(self, "Error", msg)
                self.set_status("Error")
            finally:
                self._finish(signals)

        signals.progress.connect(on_progress)
        signals.success.connect(done)
        signals.error.connect(failed)
        start_worker(task, signals)

    def _finish(self, signals: WorkerSignals) -> None:
        self._set_busy(False)
        self._refresh_history_table()
        if signals in self._workers:
            self._workers.remove(signals)

    def closeEvent(self, event) -> None:
        self.save_settings()
        super().closeEvent(event)
