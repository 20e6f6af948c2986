"""Tour the layered answer judge on predictions that need different rules.

Each row shows a model prediction, the reference answers, and which rule
accepted or rejected it: exact match after normalization, alias lookup,
range inclusion, rounding, or unit conversion. Run it with:

    python demos/judge_showcase.py
"""

from __future__ import annotations

from searchagent import judge

CASES = (
    ("The Pacific Ocean", ["pacific ocean"], "case and articles are ignored"),
    ("NYC", ["New York City"], "a built-in alias bridges the two"),
    ("20 to 24", ["21"], "the predicted range contains the reference"),
    ("176", ["176.124"], "the reference rounds to the prediction"),
    ("3 km", ["3000 m"], "the reference converts into the prediction's unit"),
    ("1.6 km", ["1609 m"], "conversion first, then rounding"),
    ("10-15", ["16"], "the reference falls outside the range"),
    ("blue whale", ["fin whale"], "no rule can bridge these"),
)


def main() -> None:
    width = max(len(prediction) for prediction, _, _ in CASES)
    for prediction, references, note in CASES:
        verdict = judge("q", prediction, references)
        mark = "accept" if verdict.correct else "reject"
        print(
            f"{prediction:<{width}}  vs {str(references):<20} "
            f"{mark:<7} {verdict.rule_fired.value:<17} ({note})"
        )


if __name__ == "__main__":
    main()
