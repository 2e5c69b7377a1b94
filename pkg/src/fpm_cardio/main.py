from rich.console import Console

from .config import GeometryConfig, SimulationConfig
from .diagnostics import diagnose
from .problem import discretize
from .utils import setup_logging


def main():
    setup_logging(True)
    console = Console()
    config = SimulationConfig(geometry=GeometryConfig(size_mm=[5.0, 5.0], spacing_mm=0.5))
    discretization = discretize(config, threads=1, deterministic=True)
    diagnostics = diagnose(discretization.partition, discretization.operators)
    print("Points:", discretization.partition.n)
    console.print(diagnostics.to_tree())


if __name__ == "__main__":
    main()
