import pytest

from slicemend.records import Attribute, AttributeSchema, Dataset, PredictionRecord


def make_schema(spec: dict[str, list[str]]) -> AttributeSchema:
    return AttributeSchema(
        attributes=tuple(
            Attribute(
                name=name,
                values=tuple(values),
                prompt_template="A photo of a #1 #LABEL.",
                question_template=f"What {name} does the main object have?",
            )
            for name, values in spec.items()
        )
    )


def make_dataset(schema: AttributeSchema, rows) -> Dataset:
    """rows: iterable of (split, label, prediction, attributes-dict)."""
    records = [
        PredictionRecord(
            image_id=f"{split}-{i:05d}",
            split=split,
            label=label,
            prediction=prediction,
            attributes=dict(attrs),
            source_ref=f"img/{i:05d}.png",
        )
        for i, (split, label, prediction, attrs) in enumerate(rows)
    ]
    return Dataset(schema, records)


@pytest.fixture
def toy_schema():
    return make_schema({"hair": ["red", "black", "blonde"], "skin": ["brown", "pale"]})


@pytest.fixture
def toy_dataset(toy_schema):
    rows = []
    # train: 2 red-hair of 10
    for i in range(10):
        hair = "red" if i < 2 else "black"
        rows.append(("train", "yes", "yes", {"hair": hair, "skin": "pale"}))
    # val: red-hair slice of 4 with 2 correct; 6 others all correct
    for i in range(10):
        hair = "red" if i < 4 else "blonde"
        pred = "no" if (hair == "red" and i % 2 == 0) else "yes"
        rows.append(("val", "yes", pred, {"hair": hair, "skin": "brown"}))
    return make_dataset(toy_schema, rows)
