from guidedsql.parser import parse
from guidedsql.query_ast import column_signature, extract_constants, print_query
from guidedsql.schema import ColumnId


def test_print_canonical_form(concert_schema):
    ast = parse(
        "select T1.name , COUNT ( * ) from singer T1 join concert T2 on "
        "T1.singer_id=T2.singer_id where T2.year>2014 group by T1.name "
        "order by count(*) desc limit 3",
        concert_schema,
    )
    assert print_query(ast) == (
        "SELECT singer.name, COUNT(*) FROM singer JOIN concert "
        "ON singer.singer_id = concert.singer_id WHERE concert.year > 2014 "
        "GROUP BY singer.name ORDER BY COUNT(*) DESC LIMIT 3"
    )


def test_print_parenthesizes_or_under_and(concert_schema):
    ast = parse(
        "select name from singer where (age < 25 or age > 50) and country = 'US'",
        concert_schema,
    )
    text = print_query(ast)
    assert "(singer.age < 25 OR singer.age > 50)" in text
    assert parse(text, concert_schema) == ast


def test_print_string_literal_escaping(concert_schema):
    ast = parse("select name from singer where name = 'O''Hara'", concert_schema)
    assert ast.where.right.value == "O'Hara"
    assert parse(print_query(ast), concert_schema) == ast


def test_column_signature_is_order_and_alias_invariant(concert_schema):
    a = parse("select name, age from singer", concert_schema)
    b = parse("select s.age, s.name from singer as s", concert_schema)
    assert column_signature(a) == column_signature(b)
    c = parse("select name, country from singer", concert_schema)
    assert column_signature(a) != column_signature(c)


def test_column_signature_tracks_agg_and_distinct(concert_schema):
    a = parse("select count(country) from singer", concert_schema)
    b = parse("select count(distinct country) from singer", concert_schema)
    assert column_signature(a) != column_signature(b)
    assert column_signature(a) == (("count", "singer.country", False),)


def test_extract_constants_includes_subqueries(concert_schema):
    ast = parse(
        "select name from singer where age > 30 and singer_id in "
        "(select singer_id from concert where year = 2015)",
        concert_schema,
    )
    found = set(extract_constants(ast))
    assert found == {
        (ColumnId("singer", "age"), 30, ">"),
        (ColumnId("concert", "year"), 2015, "="),
    }


def test_extract_constants_from_desugared_forms(concert_schema):
    ast = parse(
        "select name from singer where age between 25 and 40 "
        "and country in ('US', 'UK')",
        concert_schema,
    )
    ops = sorted((c.column, v, op) for c, v, op in extract_constants(ast))
    assert ops == [
        ("age", 25, ">="),
        ("age", 40, "<="),
        ("country", "UK", "="),
        ("country", "US", "="),
    ]
