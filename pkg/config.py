import os
from dotenv import load_dotenv

load_dotenv()

VERSION = "0.4.0"


class Config:
    """Environment-level settings shared by the library and the CLI"""

    def __init__(self):
        self.CHUNK_SIZE = int(os.getenv('CHUNK_SIZE', '10000'))
        self.MAX_WORKERS = int(os.getenv('MAX_WORKERS', '4'))
        self.OUTPUT_PATH = os.getenv('OUTPUT_PATH', './output/')
        self.LOG_PATH = os.getenv('LOG_PATH', './logs/')
        self.LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
        # files above this size are read with dask
        self.DASK_THRESHOLD_MB = float(os.getenv('DASK_THRESHOLD_MB', '100'))
        self.SEED = int(os.getenv('SEED', '0'))


config = Config()
