import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, "configs")
OUT = os.path.join(HERE, "out")


def config(name):
    return os.path.join(CONFIGS, name)


def outdir(name):
    d = os.path.join(OUT, name)
    os.makedirs(d, exist_ok=True)
    return d


def want_plots():
    return "--plot" in sys.argv
