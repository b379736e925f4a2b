import logging
import os

from config.config import LOG_FILE_PATH, LOG_LEVEL, LOGGING_ENABLED

handlers = [logging.StreamHandler()]
if LOGGING_ENABLED:
    os.makedirs(os.path.dirname(LOG_FILE_PATH) or ".", exist_ok=True)
    handlers.append(logging.FileHandler(LOG_FILE_PATH, delay=True))

logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    handlers=handlers,
)
