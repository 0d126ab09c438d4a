#!/usr/bin/env python3
"""Regenerate the bundled benchmark corpus.

Every circuit is driven by VDD (2 V) and a swept input source V1 on node
`in`. Output is deterministic: rerunning rewrites identical files.
"""

import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
VERSION = "atgen-corpus-1"

MODELS = [
    ".model nmod nmos vto=0.5 kp=200u",
    ".model pmod pmos vto=-0.5 kp=80u",
]


class Builder:
    def __init__(self, title):
        self.title = title
        self.lines = []
        self.counts = {}
        self.nodes = ["vdd", "in"]
        self.next_node = 1

    def eid(self, prefix):
        self.counts[prefix] = self.counts.get(prefix, 0) + 1
        return f"{prefix}{self.counts[prefix]}"

    def node(self):
        name = f"n{self.next_node}"
        self.next_node += 1
        self.nodes.append(name)
        return name

    def r(self, a, b, value):
        self.lines.append(f"{self.eid('R')} {a} {b} {value}")

    def c(self, a, b, value):
        self.lines.append(f"{self.eid('C')} {a} {b} {value}")

    def m(self, d, g, s, pol, w="2u", l="1u"):
        model = "nmod" if pol == "n" else "pmod"
        self.lines.append(f"{self.eid('M')} {d} {g} {s} {model} W={w} L={l}")

    def text(self, comments=(), models=MODELS):
        out = [f"* {self.title}"]
        out += [f"* {c}" for c in comments]
        out += ["VDD vdd 0 2", "V1 in 0 0"]
        out += self.lines
        out += list(models)
        out += [".end"]
        return "\n".join(out) + "\n"


# Blocks for the synthetic circuits. Each takes a driving node and returns
# the new signal nodes it created.

def blk_inverter(b, rng, src):
    o = b.node()
    b.m(o, src, "0", "n", w=rng.choice(["1u", "2u", "4u"]))
    b.r("vdd", o, rng.choice(["10k", "22k", "47k"]))
    return [o]


def blk_degenerated(b, rng, src):
    o, s = b.node(), b.node()
    b.m(o, src, s, "n", w="4u")
    b.r(s, "0", rng.choice(["1k", "2.2k"]))
    b.r("vdd", o, rng.choice(["10k", "15k"]))
    return [o, s]


def blk_follower(b, rng, src):
    o = b.node()
    b.m("vdd", src, o, "n", w="4u")
    b.r(o, "0", rng.choice(["20k", "47k"]))
    return [o]


def blk_pmos_cs(b, rng, src):
    o = b.node()
    b.m(o, src, "vdd", "p", w=rng.choice(["2u", "4u"]))
    b.r(o, "0", rng.choice(["22k", "47k"]))
    return [o]


def blk_divider(b, rng, src):
    o = b.node()
    b.r(src, o, rng.choice(["1k", "4.7k", "10k"]))
    b.r(o, "0", rng.choice(["2.2k", "10k", "22k"]))
    return [o]


def blk_rc(b, rng, src):
    o = b.node()
    b.r(src, o, rng.choice(["1k", "3.3k"]))
    b.r(o, "0", "100k")
    b.c(o, "0", rng.choice(["1p", "2.2p", "470f"]))
    return [o]


def blk_mirror(b, rng, src):
    bias, o = b.node(), b.node()
    b.r(src, bias, rng.choice(["10k", "22k"]))
    b.m(bias, bias, "0", "n", w="2u")
    b.m(o, bias, "0", "n", w=rng.choice(["2u", "4u"]))
    b.r("vdd", o, "20k")
    return [bias, o]


def blk_cmos(b, rng, src):
    o = b.node()
    b.m(o, src, "vdd", "p", w="4u")
    b.m(o, src, "0", "n", w="2u")
    b.r(o, "0", "1meg")
    return [o]


BLOCKS = [
    (blk_inverter, 1), (blk_degenerated, 2), (blk_follower, 1), (blk_pmos_cs, 1),
    (blk_divider, 1), (blk_rc, 1), (blk_mirror, 2), (blk_cmos, 1),
]


# Output of each synthetic circuit: the node with the widest DC swing over
# the 0-2 V input sweep, found by simulating the generated netlists.
OUTPUTS = {
    "syn01": "n6", "syn02": "n8", "syn03": "n1", "syn04": "n5", "syn05": "n4",
    "syn06": "n1", "syn07": "n6", "syn08": "n1", "syn09": "n5", "syn10": "n1",
    "syn11": "n1", "bench20": "n7",
}


def synthetic(name, n_nodes, seed):
    rng = random.Random(seed)
    b = Builder(f"synthetic mixed-signal block {name}")
    signals = ["in"]
    while len(b.nodes) < n_nodes:
        room = n_nodes - len(b.nodes)
        fn, size = rng.choice([blk for blk in BLOCKS if blk[1] <= room])
        signals += fn(b, rng, rng.choice(signals[-4:]))
    out = OUTPUTS.get(name, signals[-1])
    return b.text([f"output {out}"]), out, len(b.nodes)


def divider():
    b = Builder("resistive divider")
    b.lines += ["R1 in out 1k", "R2 out 0 1k", "R3 vdd out 10k"]
    b.nodes.append("out")
    return b.text(["output out"]), "out", 3


def ttrig():
    # Stiff resistive mesh between `in` and `vdd`. Every node rises with the
    # input; `out` is a stiff 1.5 V tap on the supply.
    b = Builder("threshold-trigger benchmark")
    b.lines += [
        "R1 vdd out 8", "R2 out 0 24",
        "R3 in a1 10", "R4 a1 vdd 20",
        "R5 in a2 12", "R6 a2 vdd 15",
        "R7 a1 a2 30", "R8 a2 a3 33",
        "R9 in a3 9", "R10 a3 vdd 27",
        "R11 a3 a4 18", "R12 a4 in 14", "R13 a4 vdd 16",
    ]
    b.nodes += ["out", "a1", "a2", "a3", "a4"]
    return b.text(["output out"]), "out", len(b.nodes)


def opamp():
    # Two-stage Miller amplifier in unity-gain feedback.
    b = Builder("two-stage operational amplifier, unity-gain follower")
    b.lines += [
        "RB vdd bias 40k",
        "M1 x1 out tail nmod W=10u L=1u",
        "M2 x2 in tail nmod W=10u L=1u",
        "M3 x1 x1 vdd pmod W=10u L=1u",
        "M4 x2 x1 vdd pmod W=10u L=1u",
        "M5 tail bias 0 nmod W=4u L=1u",
        "M6 out x2 vdd pmod W=40u L=1u",
        "M7 out bias 0 nmod W=8u L=1u",
        "M8 bias bias 0 nmod W=2u L=1u",
        "CC x2 cz 1p",
        "RZ cz out 2k",
        "CL out 0 2p",
        "RL out 0 200k",
    ]
    b.nodes += ["bias", "x1", "tail", "x2", "out", "cz"]
    return b.text(["output out"]), "out", len(b.nodes)


def bandgap(taps=240):
    # Mirror core, two diode stacks and a long trimming string.
    b = Builder("bandgap-style reference with trim string")
    b.lines += [
        "RS vdd pg 30k",
        "M1 pg pg vdd pmod W=8u L=1u",
        "M2 q1 pg vdd pmod W=8u L=1u",
        "M3 q2 pg vdd pmod W=8u L=1u",
        "M4 q1 q1 d1 nmod W=4u L=1u",
        "M5 d1 d1 0 nmod W=4u L=1u",
        "M6 q2 q2 e1 nmod W=32u L=1u",
        "RP e1 d2 4k",
        "M7 d2 d2 0 nmod W=32u L=1u",
        "M8 vref q1 vdd nmod W=4u L=1u",
        "RO vref 0 100k",
        "RIN in q1 1meg",
    ]
    b.nodes += ["pg", "q1", "q2", "d1", "e1", "d2", "vref"]
    prev = "vref"
    for k in range(1, taps + 1):
        t = f"t{k}"
        b.lines.append(f"RT{k} {prev} {t} 1k")
        if k % 8 == 0:
            b.lines.append(f"CT{k} {t} 0 200f")
        prev = t
        b.nodes.append(t)
    b.lines.append(f"RT{taps + 1} {prev} 0 10k")
    extra = 260 - len(b.nodes)
    for k in range(1, extra + 1):
        t = f"s{k}"
        b.lines.append(f"RSN{k} {'in' if k == 1 else f's{k - 1}'} {t} 2k")
        b.nodes.append(t)
    b.lines.append(f"RSN{extra + 1} s{extra} 0 2k")
    return b.text(["output vref"]), "vref", len(b.nodes)


def ldo(n_total=1600):
    # Pass device with an inverter driver and a long feedback ladder.
    b = Builder("low-dropout regulator with distributed feedback ladder")
    b.lines += [
        "M1 gd in 0 nmod W=4u L=1u",
        "R1 vdd gd 20k",
        "M2 vout gd vdd pmod W=200u L=1u",
        "CL vout 0 10p",
    ]
    b.nodes += ["gd", "vout"]
    prev = "vout"
    k = 0
    while len(b.nodes) < n_total:
        k += 1
        t = f"f{k}"
        b.lines.append(f"RF{k} {prev} {t} 50")
        b.nodes.append(t)
        prev = t
    b.lines.append(f"RF{k + 1} {prev} 0 50")
    return b.text(["output vout"]), "vout", len(b.nodes)


def area(text):
    """Sum of W*L over the transistors, in square meters."""
    scale = {"u": 1e-6, "n": 1e-9}
    total = 0.0
    for line in text.splitlines():
        if line[:1].upper() != "M":
            continue
        geo = dict(tok.split("=") for tok in line.split()[5:])
        w, l = (float(geo[k][:-1]) * scale[geo[k][-1]] for k in ("W", "L"))
        total += w * l
    return total


def main():
    entries = [("divider", *divider()), ("ttrig", *ttrig()), ("opamp", *opamp())]
    sizes = [18, 19, 20, 21, 22, 23, 24, 25, 18, 22, 25]
    for i, n in enumerate(sizes, start=1):
        entries.append((f"syn{i:02}", *synthetic(f"syn{i:02}", n, 1000 + i)))
    entries.append(("bench20", *synthetic("bench20", 20, 2020)))
    entries.append(("bandgap", *bandgap()))
    entries.append(("ldo", *ldo()))

    manifest = [f'version = "{VERSION}"', ""]
    for name, text, out, n in entries:
        (HERE / f"{name}.sp").write_text(text)
        a = area(text) or 100e-12
        manifest += [
            "[[entry]]",
            f'name = "{name}"',
            f'netlist = "{name}.sp"',
            f'output_node = "{out}"',
            'source = "V1"',
            f"area = {a:.6e}",
            f"expected_n = {n}",
            "",
        ]
    (HERE / "manifest.toml").write_text("\n".join(manifest))


if __name__ == "__main__":
    main()
