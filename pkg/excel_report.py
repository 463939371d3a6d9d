from __future__ import annotations

from datetime import datetime
from numbers import Real
from pathlib import Path
from typing import Any, Dict, List
import math

import pandas as pd
from openpyxl import Workbook
from openpyxl.cell.cell import MergedCell
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter
from openpyxl.utils.dataframe import dataframe_to_rows


class MetricsWorkbook:
    """Excel export of one experiment: summary, per-run metrics and aggregates."""

    def __init__(self):
        self.workbook = None

    def build(self, summary: Dict[str, Any], runs: List[Dict[str, Any]], aggregate: List[Dict[str, Any]]) -> Workbook:
        self.workbook = Workbook()
        if "Sheet" in self.workbook.sheetnames:
            self.workbook.remove(self.workbook["Sheet"])

        self._create_summary_sheet(summary)
        self._create_table_sheet("Runs", pd.DataFrame(runs))
        self._create_table_sheet("Aggregate", pd.DataFrame(aggregate))
        return self.workbook

    def save(self, path: Path) -> Path:
        if self.workbook is None:
            raise RuntimeError("build() must be called before save()")
        self.workbook.save(path)
        return path

    def _create_summary_sheet(self, summary: Dict[str, Any]):
        ws = self.workbook.create_sheet("Summary", 0)

        ws["A1"] = "Neuromorphic P-controller experiment"
        ws["A1"].font = Font(size=16, bold=True)
        ws["A1"].alignment = Alignment(horizontal="center")
        ws.merge_cells("A1:D1")

        ws["A3"] = "Generated:"
        ws["B3"] = datetime.now().strftime("%Y-%m-%d %H:%M:%S")

        row = 5
        for key, value in summary.items():
            ws[f"A{row}"] = f"{key}:"
            ws[f"A{row}"].font = Font(bold=True)
            ws[f"B{row}"] = self._safe_excel_value(value)
            row += 1

        self._auto_adjust_columns(ws, max_width=40)

    def _create_table_sheet(self, title: str, dataframe: pd.DataFrame):
        ws = self.workbook.create_sheet(title)
        if dataframe.empty:
            ws["A1"] = "No data"
            return

        for row in dataframe_to_rows(dataframe, index=False, header=True):
            ws.append([self._safe_excel_value(value) for value in row])

        header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
        header_font = Font(color="FFFFFF", bold=True)
        for cell in ws[1]:
            cell.fill = header_fill
            cell.font = header_font
            cell.alignment = Alignment(horizontal="center")

        thin_border = Border(
            left=Side(style="thin"),
            right=Side(style="thin"),
            top=Side(style="thin"),
            bottom=Side(style="thin"),
        )
        for row in ws.iter_rows(min_row=2):
            for cell in row:
                cell.border = thin_border
                if isinstance(cell.value, Real) and not isinstance(cell.value, (bool, int)):
                    cell.number_format = "0.0000"

        self._auto_adjust_columns(ws, max_width=30)
        ws.freeze_panes = "A2"

    def _auto_adjust_columns(self, worksheet, max_width: int):
        for column in worksheet.columns:
            first = next((c for c in column if not isinstance(c, MergedCell)), column[0])
            col_letter = get_column_letter(first.column)
            lengths = [len(str(c.value)) for c in column if c.value is not None]
            max_length = max(lengths) if lengths else 0
            worksheet.column_dimensions[col_letter].width = min(max_length + 2, max_width)

    @staticmethod
    def _safe_excel_value(value: Any) -> Any:
        if value is None:
            return None
        if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
            return None
        if isinstance(value, (list, tuple, dict)):
            return str(value)
        if hasattr(value, "item"):
            return value.item()
        return value


def write_metrics_workbook(
    path: Path,
    summary: Dict[str, Any],
    runs: List[Dict[str, Any]],
    aggregate: List[Dict[str, Any]],
) -> Path:
    report = MetricsWorkbook()
    report.build(summary, runs, aggregate)
    return report.save(path)
