import pytest

from linkstripe.units import (
    format_size,
    gbps,
    parse_bandwidth,
    parse_size,
    parse_time,
)


def test_sizes_use_binary_prefixes():
    assert parse_size("256M") == 256 * (1 << 20)
    assert parse_size("4MiB") == 4 * (1 << 20)
    assert parse_size("1G") == 1 << 30
    assert parse_size("64K") == 64 << 10
    assert parse_size("512") == 512
    assert parse_size(4096) == 4096
    assert parse_size(" 2 M ") == 2 << 20


def test_bandwidth_uses_decimal_prefixes():
    assert parse_bandwidth("200 GB/s") == 200e9
    assert parse_bandwidth("64GB/s") == 64e9
    assert parse_bandwidth("1 MB/s") == 1e6
    assert parse_bandwidth(5e9) == 5e9
    assert parse_bandwidth("123") == 123.0


def test_lowercase_b_means_bits():
    assert parse_bandwidth("800 Gb/s") == 800e9 / 8
    assert parse_bandwidth("400Gb/s") == 50e9


def test_time_units():
    assert parse_time("5us") == pytest.approx(5e-6)
    assert parse_time("5µs") == pytest.approx(5e-6)
    assert parse_time("1.5 ms") == pytest.approx(1.5e-3)
    assert parse_time("2s") == 2.0
    assert parse_time("10ns") == pytest.approx(1e-8)
    assert parse_time(0) == 0.0


def test_gbps_helper():
    assert gbps(128e9) == 128.0


def test_format_size_roundtrip():
    for text in ("256M", "4M", "64K", "1G"):
        assert format_size(parse_size(text)) == text
    assert format_size(1000) == "1000"


@pytest.mark.parametrize("bad", ["abc", "12 parsec", "", "1.2.3M"])
def test_bad_size_rejected(bad):
    with pytest.raises(ValueError):
        parse_size(bad)


def test_bad_bandwidth_and_time_rejected():
    with pytest.raises(ValueError):
        parse_bandwidth("7 knots")
    with pytest.raises(ValueError):
        parse_time("7 fortnights")
