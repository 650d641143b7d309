"""Province-to-province displacement flow forecasting, one month ahead."""
from __future__ import annotations

__version__ = "0.1.0"
