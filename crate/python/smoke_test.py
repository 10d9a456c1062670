"""Smoke test for the ubc extension module.

Build and install it first, e.g. `maturin build --release` in crates/py and
`pip install` the wheel, then run `python python/smoke_test.py`.
"""

from pathlib import Path

import ubc

ROOT = Path(__file__).resolve().parent.parent


def main():
    src = (ROOT / "programs" / "brighten_blur.ub").read_text()

    hw = ubc.Hardware("widefetch", capacity=512, fw=4)
    d = ubc.compile(src, hardware=hw)
    assert d.kind == "stencil", d.kind
    assert d.shift_registers == 2
    assert d.sram_words == 64
    assert d.inputs() == {"input": [64, 64]}

    ramp = [(x + y) % 256 for y in range(64) for x in range(64)]
    res = d.simulate({"input": ramp}, trace=True)
    assert res["passed"], res["report"]
    assert res["cycles"] == d.completion_cycles
    assert res["trace"].startswith("cycle,unit,port,op,address,data")
    blur = res["outputs"]["blur"]
    # 2x2 average of a doubled ramp, at the first interior point
    assert blur[0] == (2 * (0 + 1 + 1 + 2)) // 4

    again = ubc.Design.from_json(d.to_json())
    assert again.sram_words == d.sram_words

    seq = ubc.compile(src, strategy="sequential", hardware=hw)
    assert seq.completion_cycles > d.completion_cycles

    assert ubc.affine_to_deltas([2, 16], [4, 4]) == [2, 10]
    assert ubc.ag_replay([4, 4], [2, 10])[:6] == [0, 2, 4, 6, 16, 18]

    try:
        ubc.compile("")
    except ubc.UbcError as e:
        assert "empty" in str(e)
    else:
        raise AssertionError("empty program compiled")

    try:
        d.simulate(max_cycles=10)
    except ubc.SimTimeout:
        pass
    else:
        raise AssertionError("tiny cycle budget did not time out")

    row = ubc.compare_schedules("gaussian", (ROOT / "programs" / "gaussian.ub").read_text())
    assert row["opt_sram_words"] == 128 and row["speedup"] > 3, row
    print("smoke test passed:", d)


if __name__ == "__main__":
    main()
