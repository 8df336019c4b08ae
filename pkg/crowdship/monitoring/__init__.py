from .stream_monitor import *
