"""The six high-level GTSRB sign groups."""

from __future__ import annotations

from ..errors import LabelError

GROUPS = ("SpeedLimits", "Prohibitions", "Derestrictions", "Mandatory", "Danger", "Unique")

_MEMBERS = {
    "SpeedLimits": (0, 1, 2, 3, 4, 5, 7, 8),
    "Prohibitions": (9, 10, 15, 16),
    "Derestrictions": (6, 32, 41, 42),
    "Mandatory": (33, 34, 35, 36, 37, 38, 39, 40),
    "Danger": (11,) + tuple(range(18, 32)),
    "Unique": (12, 13, 14, 17),
}

GROUP_MAP = {cls: GROUPS.index(g) for g, members in _MEMBERS.items() for cls in members}


def group_of(class_id):
    """Group index (0-5) of a GTSRB class id."""
    try:
        return GROUP_MAP[int(class_id)]
    except KeyError:
        raise LabelError(f"class id {class_id} outside [0, 43)") from None


def group_name(class_id):
    return GROUPS[group_of(class_id)]
