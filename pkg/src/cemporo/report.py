"""Energy-norm errors, enrichment histories and their file formats."""

import csv
import io

import numpy as np

HISTORY_COLUMNS = ["level", "iteration", "n_u", "n_p", "err_u", "err_p",
                   "eta_u", "eta_p", "eta", "added_u", "added_p"]
_INT_COLUMNS = {"level", "iteration", "n_u", "n_p", "added_u", "added_p"}


def energy_errors(ops, state, reference):
    """Relative stiffness-norm errors of a state against the fine reference.

    Returns (err_u, err_p, absolute_flag); a zero-norm reference switches the
    corresponding entry to the absolute error and sets the flag.
    """
    du = state.u - reference.u
    dp = state.p - reference.p
    eu2 = max(float(du @ (ops.stiff_u @ du)), 0.0)
    ep2 = max(float(dp @ (ops.stiff_p @ dp)), 0.0)
    nu2 = float(reference.u @ (ops.stiff_u @ reference.u))
    np2 = float(reference.p @ (ops.stiff_p @ reference.p))
    absolute = nu2 == 0.0 or np2 == 0.0
    err_u = np.sqrt(eu2) if nu2 == 0.0 else np.sqrt(eu2 / nu2)
    err_p = np.sqrt(ep2) if np2 == 0.0 else np.sqrt(ep2 / np2)
    return float(err_u), float(err_p), absolute


def render_percent(x, digits=2):
    """Decimal fraction rendered as a percentage, e.g. 0.3191 -> '31.91%'."""
    return "%.*f%%" % (digits, 100.0 * x)


def _format_value(col, v):
    if col in _INT_COLUMNS:
        return "%d" % int(v)
    return "%.6g" % float(v)


class EnrichmentHistory:
    """Ordered records of (time level, iteration) enrichment rows."""

    def __init__(self, rows=None):
        self.rows = [dict(r) for r in rows] if rows else []

    def append(self, row):
        self.rows.append(dict(row))

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, EnrichmentHistory):
            return NotImplemented
        if len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            for col in HISTORY_COLUMNS:
                if _format_value(col, a.get(col, np.nan)) != \
                        _format_value(col, b.get(col, np.nan)):
                    return False
        return True

    def to_csv(self, path_or_buf):
        """Six-significant-digit CSV, one row per (level, iteration)."""
        own = isinstance(path_or_buf, str)
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HISTORY_COLUMNS)
            for row in self.rows:
                writer.writerow([_format_value(c, row.get(c, np.nan))
                                 for c in HISTORY_COLUMNS])
        finally:
            if own:
                fh.close()

    @classmethod
    def from_csv(cls, path_or_buf):
        own = isinstance(path_or_buf, str)
        fh = open(path_or_buf, newline="") if own else path_or_buf
        try:
            reader = csv.reader(fh)
            header = next(reader)
            if header != HISTORY_COLUMNS:
                raise ValueError("unrecognized history header: %r" % header)
            rows = []
            for parts in reader:
                if not parts:
                    continue
                row = {}
                for col, val in zip(HISTORY_COLUMNS, parts):
                    row[col] = int(val) if col in _INT_COLUMNS else float(val)
                rows.append(row)
            return cls(rows)
        finally:
            if own:
                fh.close()

    def to_text(self):
        """Terminal table with percent-rendered errors."""
        out = io.StringIO()
        out.write("level iter    dof_u    dof_p     err_u     err_p"
                  "        eta  added\n")
        for r in self.rows:
            eu = r.get("err_u", np.nan)
            ep = r.get("err_p", np.nan)
            out.write("%5d %4d %8d %8d %9s %9s %10.4g %3d+%d\n" % (
                r["level"], r["iteration"], r["n_u"], r["n_p"],
                render_percent(eu) if np.isfinite(eu) else "-",
                render_percent(ep) if np.isfinite(ep) else "-",
                r.get("eta", np.nan),
                r.get("added_u", 0), r.get("added_p", 0)))
        return out.getvalue()


def export_history(history, path):
    if isinstance(history, list):
        history = EnrichmentHistory(history)
    history.to_csv(path)
    return history


def export_field_snapshots(ops, state, stem):
    """Nodal CSV grids (one row per fine-grid row) of u_x, u_y and p."""
    grid = ops.grid
    d = ops.dofs
    full_u = d.extend_u(state.u)
    full_p = d.extend_p(state.p)
    shape = (grid.nfy + 1, grid.nfx + 1)
    for name, arr in (("u1", full_u[0::2]), ("u2", full_u[1::2]),
                      ("p", full_p)):
        np.savetxt("%s_%s.csv" % (stem, name), arr.reshape(shape),
                   delimiter=",", fmt="%.6g")
