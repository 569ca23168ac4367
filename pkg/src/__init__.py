from .datamodel import *
