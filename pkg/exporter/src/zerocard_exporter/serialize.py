"""Column-definition text serialization.

The rule must stay string-identical to the estimator toolkit's serializer;
both packages run the shared fixture of descriptor/expected-text pairs to
keep them in lock step.
"""

from __future__ import annotations


def serialize_column_text(
    name: str,
    data_type: str | None = None,
    constraints: str | None = None,
    comment: str | None = None,
) -> str:
    """"name, type[, constraints][, comment]"; empty elements are omitted."""
    if not name:
        raise ValueError("column name must be non-empty")
    parts = [name]
    for elem in (data_type, constraints, comment):
        if elem:
            parts.append(elem)
    return ", ".join(parts)


def schema_column_texts(schema: dict) -> list[str]:
    """Serialized text of every column in a parsed schema object."""
    texts = []
    for col in schema.get("columns", []):
        texts.append(
            serialize_column_text(
                col.get("name", ""),
                col.get("data_type"),
                col.get("constraints"),
                col.get("comment"),
            )
        )
    return texts
