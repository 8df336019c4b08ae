from .negotiation import *
