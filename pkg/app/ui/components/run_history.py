from typing import Dict, List

from PySide6.QtCore import Qt, Signal
from PySide6.QtWidgets import (QAbstractItemView, QApplication, QGroupBox, QHeaderView, QMenu,
                               QTableWidget, QTableWidgetItem, QVBoxLayout, QWidget)

from app.core.utils import format_bytes

COLUMNS = ["Time (UTC)", "Action", "Status", "Written", "Details"]


def history_cells(row: Dict) -> List[str]:
    ts = str(row.get("ts", "")).replace("T", " ").replace("+00:00", "")
    return [
        ts,
        str(row.get("action", "")),
        str(row.get("status", "")),
        format_bytes(int(row.get("bytes", 0) or 0)),
        str(row.get("details", "")),
    ]


class RunHistoryWidget(QGroupBox):
    statusChanged = Signal(str)

    def __init__(self, parent: QWidget = None):
        super().__init__("Run History", parent)
        layout = QVBoxLayout(self)
        self.table = QTableWidget(0, len(COLUMNS))
        self.table.setHorizontalHeaderLabels(COLUMNS)
        header = self.table.horizontalHeader()
        for col in range(len(COLUMNS) - 1):
            header.setSectionResizeMode(col, QHeaderView.ResizeToContents)
        header.setSectionResizeMode(len(COLUMNS) - 1, QHeaderView.Stretch)
        self.table.setSelectionBehavior(QTableWidget.SelectRows)
        self.table.setSelectionMode(QAbstractItemView.SingleSelection)
        self.table.setEditTriggers(QTableWidget.NoEditTriggers)
        self.table.setAlternatingRowColors(True)
        self.table.verticalHeader().setVisible(False)
        self.table.setShowGrid(False)
        self.table.setContextMenuPolicy(Qt.CustomContextMenu)
        self.table.customContextMenuRequested.connect(self._show_context_menu)
        layout.addWidget(self.table)

    def _show_context_menu(self, pos) -> None:
        item = self.table.itemAt(pos)
        if item:
            self.table.selectRow(item.row())
        row = self.table.currentRow()
        menu = QMenu(self)
        act_copy = menu.addAction("Copy Row")
        act_copy.setEnabled(row >= 0)
        if menu.exec(self.table.viewport().mapToGlobal(pos)) != act_copy or row < 0:
            return
        values = [self.table.item(row, c).text() if self.table.item(row, c) else ""
                  for c in range(self.table.columnCount())]
        QApplication.clipboard().setText(" | ".join(values))
        self.statusChanged.emit("History row copied")

    def populate(self, rows: List[Dict]) -> None:
        self.table.setSortingEnabled(False)
        self.table.setRowCount(len(rows))
        # newest first
        for i, row in enumerate(reversed(rows)):
            for col, text in enumerate(history_cells(row)):
                self.table.setItem(i, col, QTableWidgetItem(text))
        self.table.setSortingEnabled(True)
