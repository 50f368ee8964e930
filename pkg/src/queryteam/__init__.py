"""Query teamwork for set-prediction detectors: scale-wise grouping, group-wise matching, position constraint and preference-based anchors."""
