from .geo import *
from .rng import RandomStreams
from .ingest import *
