"""Write the shipped double-integrator instance to demo/ as system and objective JSON."""
from pathlib import Path

from cloak.instances import demo_instance
from cloak.io import objective_to_json, plant_to_json, save_json

OUT = Path(__file__).resolve().parent.parent / "demo"


def main():
    inst = demo_instance()
    OUT.mkdir(exist_ok=True)
    save_json(OUT / "double_integrator.system.json", plant_to_json(inst.system.bare()))
    save_json(OUT / "double_integrator.objective.json",
              objective_to_json(inst.objective, inst.x0[:-1]))
    print(f"wrote demo files to {OUT}")


if __name__ == "__main__":
    main()
