"""
Logging configuration for the tensor denoising toolkit.
Structured JSON output for batch runs, readable colour output for the desk.
"""
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Callable, Optional, TypeVar

F = TypeVar("F", bound=Callable[..., Any])

# Structured context keys understood by both formatters
CONTEXT_FIELDS = (
    "phase",
    "iteration",
    "objective",
    "lipschitz",
    "snr_db",
    "duration",
    "error_code",
)


class ProductionFormatter(logging.Formatter):
    """Custom formatter for production logs with JSON structure"""

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        for field in CONTEXT_FIELDS:
            if hasattr(record, field):
                key = "duration_ms" if field == "duration" else field
                log_entry[key] = getattr(record, field)

        if record.exc_info:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": self.formatException(record.exc_info),
            }

        return json.dumps(log_entry, default=str)


class DevelopmentFormatter(logging.Formatter):
    """Human-readable formatter for development"""

    COLORS = {
        "DEBUG": "\033[36m",  # Cyan
        "INFO": "\033[32m",  # Green
        "WARNING": "\033[33m",  # Yellow
        "ERROR": "\033[31m",  # Red
        "CRITICAL": "\033[35m",  # Magenta
    }
    RESET = "\033[0m"

    def format(self, record: logging.LogRecord) -> str:
        timestamp = datetime.now().strftime("%H:%M:%S")
        color = self.COLORS.get(record.levelname, "")

        base_msg = (
            f"{timestamp} {color}{record.levelname:8}{self.RESET} "
            f"{record.name:28} {record.getMessage()}"
        )

        context_info = []
        if hasattr(record, "phase"):
            context_info.append(f"phase={record.phase}")
        if hasattr(record, "iteration"):
            context_info.append(f"iter={record.iteration}")
        if hasattr(record, "objective"):
            context_info.append(f"obj={record.objective:.6g}")
        if hasattr(record, "snr_db"):
            context_info.append(f"snr={record.snr_db:.4f}dB")
        if hasattr(record, "duration"):
            context_info.append(f"duration={record.duration}ms")

        if context_info:
            base_msg += f" [{', '.join(context_info)}]"

        if record.exc_info:
            base_msg += "\n" + self.formatException(record.exc_info)

        return base_msg


def setup_logging(
    environment: Optional[str] = None,
    log_level: Optional[str] = None,
    log_file: Optional[str] = None,
) -> None:
    """
    Configure logging based on environment.

    Args:
        environment: 'development', 'production', or 'testing'
        log_level: Override log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Path to an additional log file (production only)
    """
    if environment is None:
        environment = os.getenv("ENVIRONMENT", "development").lower()

    if log_level is None:
        log_level = os.getenv("LOG_LEVEL", "INFO")

    root_logger = logging.getLogger()
    root_logger.handlers.clear()

    # Diagnostics go to stderr; stdout carries command results
    if environment == "production":
        formatter: logging.Formatter = ProductionFormatter()

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

        if log_file:
            file_handler = logging.FileHandler(log_file)
            file_handler.setFormatter(formatter)
            root_logger.addHandler(file_handler)

    elif environment == "testing":
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        root_logger.addHandler(handler)
        log_level = "WARNING"

    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(DevelopmentFormatter())
        root_logger.addHandler(handler)

    root_logger.setLevel(getattr(logging, log_level.upper()))


def get_logger(name: str) -> logging.Logger:
    """Get a logger with the specified name"""
    return logging.getLogger(name)


def log_performance(logger: Optional[logging.Logger] = None) -> Callable[[F], F]:
    """Decorator to log function performance"""

    def decorator(func: F) -> F:
        nonlocal logger
        if logger is None:
            logger = get_logger(func.__module__)
        func_name = f"{func.__module__}.{func.__name__}"

        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration = (time.perf_counter() - start_time) * 1000
                logger.error(
                    f"Function failed: {func_name} - {e}",
                    extra={
                        "duration": round(duration, 2),
                        "phase": func.__name__,
                        "error_code": getattr(e, "error_code", type(e).__name__),
                    },
                    exc_info=True,
                )
                raise
            duration = (time.perf_counter() - start_time) * 1000
            logger.debug(
                f"Function completed: {func_name}",
                extra={"duration": round(duration, 2), "phase": func.__name__},
            )
            return result

        return wrapper  # type: ignore[return-value]

    return decorator
