"""Smoke test for the tsvm extension module."""

from pathlib import Path

import tsvm

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def load(name):
    return tsvm.Program.assemble((CORPUS / name).read_text())


def main():
    fig = load("counting_loop.tsasm")
    assert not fig.is_instrumented
    inst, report = fig.instrument()
    assert inst.is_instrumented and fig.verify(inst) == []
    assert tsvm.Program.load(inst.to_bytes()) == inst

    plain = tsvm.run(fig)
    timed = tsvm.run(inst, trace=True)
    assert plain["output"] == timed["output"] == [5]
    assert timed["ts"] == 7 and plain["ts"] == 0
    assert timed["trace"][0]["ts"] == 0

    s = tsvm.Session(load("loop.tsasm"), [20, 2])
    s.set_breakpoint("main", 2, "ts == 8")
    stop = s.continue_()
    assert s.position() == ("main", 2, 8), stop
    assert s.evaluate("i") == 14
    mark = s.bookmark("here")
    s.continue_()
    assert s.terminated
    s.goto_bookmark(mark)
    assert s.position() == ("main", 2, 8)

    w = tsvm.Session(load("writes_135.tsasm"))
    w.set_breakpoint("main", 7)
    w.continue_()
    result = w.reverse_watchpoint("x")
    assert [r["value"] for r in result["writes"]] == [1, 3, 5]
    assert w.position()[2] == 5

    b = tsvm.Session(load("two_conditions.tsasm"))
    b.continue_()
    outcome = b.binary_search("cache >= 0", 0, 15)
    assert outcome["boundary_ts"] == 9 and outcome["verified"]

    try:
        tsvm.Program.assemble(".func main 0\n.line 1\nbogus\n")
    except tsvm.AssemblyError:
        pass
    else:
        raise AssertionError("bad source assembled")
    try:
        s.clear(99)
    except tsvm.DebugError as e:
        assert e.args[0]
    else:
        raise AssertionError("cleared a missing breakpoint")
    print("smoke test passed")


if __name__ == "__main__":
    main()
