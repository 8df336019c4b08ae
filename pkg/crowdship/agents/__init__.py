from .courier_model import *
