"""
A walk through a solver registry
================================

Loads the fixture registry shipped with the tests, looks entries up by
glob and prints what satex would build and run for one of them.
"""
from pathlib import Path

from satheritage.recipes import generate_run_wrapper, recipe_for
from satheritage.registry import image_name, info, load_registry, resolve

ROOT = Path(__file__).resolve().parent.parent
registry = load_registry(ROOT / "tests" / "fixtures" / "registry")

# every set is a folder; every entry is name:version
for solver_set in registry.sets:
    print(solver_set.set_id, [str(e.spec) for e in solver_set.entries])

# globs work on both halves of the spec
print([image_name(s) for s in resolve(registry, "*:2000")])

# what `satex info` shows
print(info(registry, "cadical:2019").render())

# source releases build in two stages, binary releases in one
for spec in registry.specs():
    print(f"{str(spec):<18} stages={recipe_for(registry, spec).stage_count}")

print(recipe_for(registry, "toy:2000").text)
print(generate_run_wrapper(registry.entry("toy:2000")))
