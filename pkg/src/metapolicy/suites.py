"""Bundled task suites.

``train_small`` (12 tasks) and ``test_small`` (8 tasks) share task shapes but
no object or room names, so anything carried from one to the other has to be
a general rule.  Training tasks run in id order: each single-blocker task
comes before the tasks that stack several blockers, and two tasks need no
correction at all.
"""

from __future__ import annotations

from typing import Callable

from .rulelang import fact
from .textworld import TaskSpec, make_state

OPEN, CLOSED = (True, True), (True, False)
FIXED = (False, False)


def _task(task_id: str, archetype: str, state, goal, pools=None) -> TaskSpec:
    return TaskSpec(task_id, state, tuple(goal), archetype=archetype, pools=pools or {})


def train_small() -> list[TaskSpec]:
    return [
        _task(
            "t01_hidden_apple", "pick_place",
            make_state(
                "kitchen", ["kitchen", "hallway"],
                {"fridge": ("kitchen", *CLOSED), "table": ("kitchen", *FIXED),
                 "coatrack": ("hallway", *FIXED)},
                {"apple": ("fridge",)},
            ),
            [fact("in", "apple", "table")],
        ),
        _task(
            "t02_clean_mug", "clean_place",
            make_state(
                "kitchen", ["kitchen", "livingroom"],
                {"counter": ("kitchen", *FIXED), "shelf": ("livingroom", *FIXED)},
                {"mug": ("counter", False)},
                {"kitchen": ["cleaning"]},
            ),
            [fact("clean", "mug"), fact("in", "mug", "shelf")],
        ),
        _task(
            "t03_heat_potato", "heat_place",
            make_state(
                "kitchen", ["kitchen", "diningroom"],
                {"counter": ("kitchen", *FIXED), "plate": ("kitchen", *FIXED),
                 "sideboard": ("diningroom", *FIXED)},
                {"potato": ("counter",)},
                {"kitchen": ["heating"]},
            ),
            [fact("hot", "potato"), fact("in", "potato", "plate")],
        ),
        _task(
            "t04_cool_soda", "cool_place",
            make_state(
                "livingroom", ["livingroom", "pantry"],
                {"sofa": ("livingroom", *FIXED), "rack": ("pantry", *FIXED)},
                {"soda": ("sofa",)},
                {"pantry": ["cooling"]},
            ),
            [fact("cold", "soda"), fact("in", "soda", "rack")],
        ),
        _task(
            "t05_stow_towel", "pick_place",
            make_state(
                "bathroom", ["bathroom", "bedroom"],
                {"tub": ("bathroom", *FIXED), "dresser": ("bedroom", *CLOSED)},
                {"towel": ("tub",)},
            ),
            [fact("in", "towel", "dresser")],
        ),
        _task(
            "t06_find_book", "pick_place",
            make_state(
                "attic", ["attic", "bedroom", "study"],
                {"shelf": ("attic", *FIXED), "bed": ("bedroom", *FIXED),
                 "chest": ("study", *CLOSED)},
                {"book": ("chest",)},
            ),
            [fact("in", "book", "shelf")],
        ),
        _task(
            "t07_move_vase", "pick_place",
            make_state(
                "hallway", ["hallway", "livingroom"],
                {"stand": ("hallway", *FIXED), "mantel": ("livingroom", *FIXED)},
                {"vase": ("stand",)},
            ),
            [fact("in", "vase", "mantel")],
        ),
        _task(
            "t08_examine_lamp", "examine",
            make_state(
                "office", ["office", "bedroom"],
                {"desk": ("office", *FIXED), "nightstand": ("bedroom", *FIXED)},
                {"lamp": ("desk",)},
            ),
            [fact("holding", "lamp"), fact("at", "bedroom")],
        ),
        # Stacked: several blockers in one task.
        _task(
            "t09_hidden_to_drawer", "pick_place",
            make_state(
                "kitchen", ["kitchen", "office"],
                {"cabinet": ("kitchen", *CLOSED), "cupboard": ("kitchen", *CLOSED),
                 "drawer": ("office", *CLOSED)},
                {"knife": ("cabinet",)},
            ),
            [fact("in", "knife", "drawer")],
            pools={"knife": ("cabinet", "cupboard")},
        ),
        _task(
            "t10_clean_hot_egg", "heat_place",
            make_state(
                "kitchen", ["kitchen", "laundry"],
                {"counter": ("kitchen", *FIXED), "pan": ("kitchen", *FIXED),
                 "basin": ("laundry", *FIXED)},
                {"egg": ("basin", False)},
                {"laundry": ["cleaning"], "kitchen": ["heating"]},
            ),
            [fact("clean", "egg"), fact("hot", "egg"), fact("in", "egg", "pan")],
        ),
        _task(
            "t11_find_cold_milk", "cool_place",
            make_state(
                "garage", ["garage", "mudroom", "cellar"],
                {"bench": ("garage", *FIXED), "boots": ("mudroom", *FIXED),
                 "crate": ("cellar", *CLOSED), "cooler": ("cellar", *FIXED)},
                {"milk": ("crate",)},
                {"cellar": ["cooling"]},
            ),
            [fact("cold", "milk"), fact("in", "milk", "cooler")],
        ),
        _task(
            "t12_hidden_dirty_cup", "clean_place",
            make_state(
                "kitchen", ["kitchen", "diningroom"],
                {"dishwasher": ("kitchen", *CLOSED), "table": ("diningroom", *FIXED)},
                {"cup": ("dishwasher", False)},
                {"kitchen": ["cleaning"]},
            ),
            [fact("clean", "cup"), fact("in", "cup", "table")],
        ),
    ]


def test_small() -> list[TaskSpec]:
    return [
        _task(
            "s01_hidden_cheese", "pick_place",
            make_state(
                "galley", ["galley", "porch"],
                {"icebox": ("galley", *CLOSED), "tray": ("galley", *FIXED),
                 "bench": ("porch", *FIXED)},
                {"cheese": ("icebox",)},
            ),
            [fact("in", "cheese", "tray")],
        ),
        _task(
            "s02_clean_bowl", "clean_place",
            make_state(
                "scullery", ["scullery", "parlor"],
                {"drainboard": ("scullery", *FIXED), "hutch": ("parlor", *FIXED)},
                {"bowl": ("drainboard", False)},
                {"scullery": ["cleaning"]},
            ),
            [fact("clean", "bowl"), fact("in", "bowl", "hutch")],
        ),
        _task(
            "s03_heat_soup", "heat_place",
            make_state(
                "galley", ["galley", "porch"],
                {"shelf": ("galley", *FIXED), "bowlstand": ("galley", *FIXED)},
                {"soup": ("shelf",)},
                {"galley": ["heating"]},
            ),
            [fact("hot", "soup"), fact("in", "soup", "bowlstand")],
        ),
        _task(
            "s04_cool_juice", "cool_place",
            make_state(
                "parlor", ["parlor", "larder"],
                {"armchair": ("parlor", *FIXED), "bin": ("larder", *FIXED)},
                {"juice": ("armchair",)},
                {"larder": ["cooling"]},
            ),
            [fact("cold", "juice"), fact("in", "juice", "bin")],
        ),
        _task(
            "s05_stow_shirt", "pick_place",
            make_state(
                "nursery", ["nursery", "closet"],
                {"crib": ("nursery", *FIXED), "wardrobe": ("closet", *CLOSED)},
                {"shirt": ("crib",)},
            ),
            [fact("in", "shirt", "wardrobe")],
        ),
        _task(
            "s06_find_map", "pick_place",
            make_state(
                "loft", ["loft", "den", "vault"],
                {"ledge": ("loft", *FIXED), "couch": ("den", *FIXED),
                 "safe": ("vault", *CLOSED)},
                {"map": ("safe",)},
            ),
            [fact("in", "map", "ledge")],
        ),
        _task(
            "s07_clean_hot_pot", "heat_place",
            make_state(
                "galley", ["galley", "washroom"],
                {"stove": ("galley", *FIXED), "tub": ("washroom", *FIXED)},
                {"pot": ("tub", False)},
                {"washroom": ["cleaning"], "galley": ["heating"]},
            ),
            [fact("clean", "pot"), fact("hot", "pot"), fact("in", "pot", "stove")],
        ),
        _task(
            "s08_examine_clock", "examine",
            make_state(
                "den", ["den", "parlor"],
                {"mantel": ("den", *FIXED), "sofa": ("parlor", *FIXED)},
                {"clock": ("mantel",)},
            ),
            [fact("holding", "clock"), fact("at", "parlor")],
        ),
    ]


def defect_fixtures() -> dict[str, TaskSpec]:
    """One training task per defect, each failing on that defect alone."""
    tasks = {t.task_id: t for t in train_small()}
    return {
        "never_opens_closed": tasks["t01_hidden_apple"],
        "cleans_before_taking": tasks["t02_clean_mug"],
        "ignores_temperature_goals": tasks["t03_heat_potato"],
        "wanders_on_missing_object": tasks["t06_find_book"],
    }


SUITES: dict[str, Callable[[], list[TaskSpec]]] = {
    "train_small": train_small,
    "test_small": test_small,
}
