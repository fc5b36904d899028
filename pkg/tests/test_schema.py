import json

import pytest

from guidedsql.schema import (
    ColumnId,
    Schema,
    SchemaError,
    Table,
    load_spider_schemas,
    schema_from_spider,
)

from conftest import make_concert_schema, spider_entry


def test_column_lookup_is_case_insensitive():
    schema = make_concert_schema()
    assert schema.has_table("SINGER")
    assert schema.has_column("Singer", "AGE")
    assert schema.column_type(ColumnId("singer", "rating")) == "real"


def test_duplicate_table_rejected():
    with pytest.raises(SchemaError):
        Schema(tables=[Table("t", [("x", "integer")]), Table("t", [("y", "text")])])


def test_duplicate_column_rejected():
    with pytest.raises(SchemaError):
        Schema(tables=[Table("t", [("x", "integer"), ("x", "text")])])


def test_unknown_type_rejected():
    with pytest.raises(SchemaError):
        Schema(tables=[Table("t", [("x", "varchar2")])])


def test_key_must_name_existing_column():
    with pytest.raises(SchemaError):
        Schema(
            tables=[Table("t", [("x", "integer")])],
            primary_keys=[ColumnId("t", "nope")],
        )


def test_primary_key_and_parent_lookup():
    schema = make_concert_schema()
    assert schema.is_primary_key(ColumnId("singer", "singer_id"))
    assert not schema.is_primary_key(ColumnId("singer", "age"))
    assert schema.parent_of(ColumnId("concert", "singer_id")) == ColumnId(
        "singer", "singer_id"
    )
    assert schema.parent_of(ColumnId("concert", "year")) is None


def test_columns_of_type():
    schema = make_concert_schema()
    assert schema.columns_of_type("singer", "text") == ["name", "country"]


def test_spider_roundtrip(tmp_path):
    schema = make_concert_schema()
    entry = spider_entry("concert_singer", schema)
    rebuilt = schema_from_spider(entry)
    assert [t.name for t in rebuilt.tables] == [t.name for t in schema.tables]
    assert rebuilt.table("singer").columns == schema.table("singer").columns
    assert rebuilt.primary_keys == schema.primary_keys
    assert rebuilt.foreign_keys == schema.foreign_keys

    tables_json = tmp_path / "tables.json"
    tables_json.write_text(json.dumps([entry]))
    loaded = load_spider_schemas(tables_json)
    assert set(loaded) == {"concert_singer"}


def test_spider_type_aliases():
    entry = {
        "db_id": "d",
        "table_names_original": ["T"],
        "column_names_original": [[-1, "*"], [0, "A"], [0, "b"]],
        "column_types": ["text", "number", "datetime"],
    }
    schema = schema_from_spider(entry)
    assert schema.table("t").columns == [("a", "real"), ("b", "time")]
