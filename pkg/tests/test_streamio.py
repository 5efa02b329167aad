import pytest

from robust_streaming.errors import StreamFormatError
from robust_streaming.sketches import StreamUpdate
from robust_streaming.streamio import parse_stream, read_stream, write_stream


def test_parse_with_comments_and_blanks():
    text = ["# header\n", "\n", "1,+1\n", "  2 , -3  # trailing\n", "7,0\n"]
    assert parse_stream(text) == [StreamUpdate(1, 1), StreamUpdate(2, -3), StreamUpdate(7, 0)]


def test_empty():
    assert parse_stream([]) == []


@pytest.mark.parametrize("bad,line", [(["1,1", "1"], 2), (["1,1,1"], 1), (["x,1"], 1),
                                      (["1,1", "", "0,1"], 3), (["1,1.5"], 1)])
def test_errors_carry_line_number(bad, line):
    with pytest.raises(StreamFormatError) as info:
        parse_stream(bad)
    assert info.value.line_no == line
    assert str(info.value).startswith(f"line {line}:")


def test_round_trip(tmp_path):
    ups = [StreamUpdate(3, 1), StreamUpdate(10, -2)]
    path = tmp_path / "s.txt"
    write_stream(path, ups, header="two updates")
    assert path.read_text().splitlines()[0] == "# two updates"
    assert read_stream(path) == ups
