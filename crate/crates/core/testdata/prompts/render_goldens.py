"""Renders the prompt goldens by plain placeholder substitution on the
template assets. Run once; the .txt outputs are committed and frozen."""
from pathlib import Path

HERE = Path(__file__).parent
TEMPLATES = HERE.parent.parent / "templates"

TASK = "We study a small weather system."
VARS = [
    ("A", "Air temperature near the ground."),
    ("B", "Relative humidity of the air."),
    ("C", "Amount of cloud cover."),
]


def info(exclude=()):
    return "\n".join(f"{n}: {d}" for n, d in VARS if n not in exclude)


def fill(name, values):
    text = (TEMPLATES / name).read_text()
    for key, value in values.items():
        text = text.replace("{" + key + "}", value)
    return text


(HERE / "zero_shot_A_B.txt").write_text(fill("zero_shot.txt", {
    "task_description": TASK, "target": "B", "parent": "A",
    "variables_info": info(("A", "B")),
    "target_info": VARS[1][1], "parent_info": VARS[0][1],
}))
(HERE / "parent_update_A_B__A_C.txt").write_text(fill("parent_update.txt", {
    "variables_info": info(), "experiment_feedback": "(A->B,100)",
    "experiment_prediction": "(A->B,62)", "parent": "A",
    "other_edge_prediction": "(NOT A->C, 40)",
}))
(HERE / "child_update_A_B__C_B.txt").write_text(fill("child_update.txt", {
    "variables_info": info(), "experiment_feedback": "(NOT A->B, 100)",
    "experiment_prediction": "(A->B,62)", "child": "B",
    "other_edge_prediction": "(C->B,25)",
}))
