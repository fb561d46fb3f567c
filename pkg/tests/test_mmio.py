import random

import pytest
from hypothesis import given, settings, strategies as st

from mmiofuzz.mmio import (
    REPEAT, InputCursor, InputExhausted, MmioManager, PeripheralStore, RegisterState,
    encode_playback, mmio_read, mmio_write,
)

from oracles import reference_playback


def drive(data, accesses, pip=True, passthrough=()):
    """Run an access list through MmioManager the way the VM would."""
    mgr = MmioManager(PeripheralStore(passthrough=frozenset(passthrough)), pip=pip)
    mgr.start(data)
    out = []
    for acc in accesses:
        if acc[0] == "W":
            mgr.write(acc[1], acc[2], acc[3])
            continue
        try:
            out.append(mgr.read(acc[1], acc[2]))
        except InputExhausted:
            break
    return out, mgr.cursor.offset


def test_sixteen_identical_reads_cost_eight_bytes():
    data = encode_playback([(0x40000000, 4, 0xDEADBEEF)] + [(0x40000000, 4, REPEAT)] * 15)
    assert len(data) == 8
    assert data[:4] == b"\xfc\xff\xff\xff"
    out, used = drive(data, [("R", 0x40000000, 4)] * 16)
    assert out == [0xDEADBEEF] * 16
    assert used == 8


def test_control_word_fields_are_consumed_low_bits_first():
    # fields: 0 (fresh), 3 (repeat), 1 (fresh), 3 (repeat), then zeros
    ctrl = 0b11_01_11_00
    data = ctrl.to_bytes(4, "little") + bytes([0x11, 0x22])
    out, used = drive(data, [("R", 0x40000004, 1)] * 4)
    assert out == [0x11, 0x11, 0x22, 0x22]
    assert used == 6


def test_control_words_are_per_register():
    a, b = 0x40000000, 0x40000010
    data = encode_playback([(a, 1, 5), (b, 1, 6), (a, 1, REPEAT), (b, 1, REPEAT)])
    # two control words plus two value bytes
    assert len(data) == 10
    out, _ = drive(data, [("R", a, 1), ("R", b, 1), ("R", a, 1), ("R", b, 1)])
    assert out == [5, 6, 5, 6]


def test_seventeenth_read_fetches_new_control_word():
    accesses = [(0x40000000, 2, 7)] + [(0x40000000, 2, REPEAT)] * 16
    data = encode_playback(accesses)
    assert len(data) == 4 + 2 + 4
    out, used = drive(data, [("R", 0x40000000, 2)] * 17)
    assert out == [7] * 17 and used == 10


def test_repeat_after_firmware_write_returns_patched_value():
    store = PeripheralStore()
    cur = InputCursor(b"\xff\xff\xff\xff")
    mmio_write(store, 0x40000002, 1, 0xAB)
    assert store.registers[0x40000000].last_value == 0x00AB0000
    assert mmio_read(store, cur, 0x40000000, 4) == 0x00AB0000
    assert cur.offset == 4


def test_narrow_repeat_truncates_last_value():
    store = PeripheralStore({0x40000000: RegisterState(0x12345678, 0b11, 1)})
    assert mmio_read(store, InputCursor(b""), 0x40000000, 1) == 0x78


def test_raw_mode_uses_width_bytes_and_no_control_words():
    out, used = drive(bytes(range(1, 8)), [("R", 0x40000000, 1), ("R", 0x40000000, 2),
                                          ("R", 0x40000000, 4)], pip=False)
    assert out == [0x01, 0x0302, 0x07060504]
    assert used == 7


def test_exhaustion_raises_and_leaves_cursor():
    cur = InputCursor(b"\x00\x00")
    with pytest.raises(InputExhausted):
        mmio_read(PeripheralStore(), cur, 0x40000000, 4)
    assert cur.offset == 0


def test_passthrough_behaves_like_memory_and_costs_nothing():
    store = PeripheralStore(passthrough=frozenset({0x40000101}))
    assert 0x40000100 in store.passthrough
    cur = InputCursor(b"")
    mmio_write(store, 0x40000100, 4, 0xCAFEF00D)
    assert mmio_read(store, cur, 0x40000100, 4) == 0xCAFEF00D
    assert mmio_read(store, cur, 0x40000103, 1) == 0xCA
    assert cur.offset == 0


def test_reset_clears_registers_but_keeps_passthrough_set():
    store = PeripheralStore(passthrough=frozenset({0x40000000}))
    mmio_write(store, 0x40000010, 4, 1)
    mmio_write(store, 0x40000000, 4, 1)
    store.reset()
    assert store.registers == {} and store.passthrough_cells == {}
    assert store.passthrough == frozenset({0x40000000})


def test_copy_is_deep():
    store = PeripheralStore()
    mmio_write(store, 0x40000000, 4, 9)
    twin = store.copy()
    mmio_write(store, 0x40000000, 4, 10)
    assert twin.registers[0x40000000].last_value == 9


def random_accesses(rng, n):
    regs = [0x40000000 + 4 * i for i in range(4)]
    out = []
    for _ in range(n):
        addr = rng.choice(regs) + rng.choice((0, 0, 1, 2))
        width = rng.choice((1, 2, 4))
        if rng.random() < 0.15:
            out.append(("W", addr, width, rng.getrandbits(8 * width)))
        else:
            out.append(("R", addr, width))
    return out


@pytest.mark.parametrize("pip", [True, False])
def test_matches_reference_decoder_on_random_pairs(pip):
    rng = random.Random(7 + pip)
    for _ in range(500):
        data = rng.randbytes(rng.randrange(0, 80))
        accesses = random_accesses(rng, rng.randrange(1, 60))
        assert drive(data, accesses, pip) == reference_playback(data, accesses, pip)


values = st.one_of(st.none(), st.integers(0, 0xFFFFFFFF))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0x40000000, 0x40000004, 0x40001000]),
                          st.sampled_from([1, 2, 4]), values), max_size=60))
def test_encode_playback_reproduces_requested_values(seq):
    data = encode_playback(seq)
    out, used = drive(data, [("R", a, w) for a, w, _ in seq])
    expect = []
    last = {}
    for a, w, v in seq:
        v = last.get(a, 0) % (1 << 8 * w) if v is None else v % (1 << 8 * w)
        last[a] = v
        expect.append(v)
    assert out == expect
    assert used == len(data)


def test_encode_playback_raw_rejects_repeats():
    with pytest.raises(ValueError):
        encode_playback([(0x40000000, 4, REPEAT)], pip=False)


def test_repeat_rate_of_random_fields_is_one_in_four():
    rng = random.Random(3)
    n_words = 1 << 14
    data = rng.randbytes(4 * n_words)
    repeats = 0
    for i in range(n_words):
        word = int.from_bytes(data[4 * i:4 * i + 4], "little")
        repeats += sum((word >> (2 * k)) & 3 == 3 for k in range(16))
    assert abs(repeats / (16 * n_words) - 0.25) < 0.01


def test_irq_enable_register_does_not_consume_input():
    from mmiofuzz.irq import IrqController
    irq = IrqController()
    mgr = MmioManager(pip=True, irq=irq, irq_enable_addr=0x50000000)
    mgr.start(b"")
    mgr.write(0x50000000, 4, 0x6)
    assert irq.enable_mask == 0x6
    mgr.write(0x50000001, 1, 0x1)
    assert irq.enable_mask == 0x106
    assert mgr.read(0x50000000, 4) == 0x106
    assert mgr.cursor.offset == 0
