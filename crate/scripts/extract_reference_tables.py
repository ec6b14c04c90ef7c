"""Extract the RiverSwim coverage tables from paper.md into a reference CSV."""
import re
import sys

ENTRIES = ["Q(1,0)", "Q(3,1)", "Q(6,0)"] + [f"V({s})" for s in range(1, 7)]
BLOCKS = {
    "Model-based bootstrap with pivot CI": ("model_based", "pivot"),
    "Model-based bootstrap with percentile CI": ("model_based", "percentile"),
    "Episodic bootstrap with pivot CI": ("episodic", "pivot"),
    "Episodic bootstrap with percentile CI": ("episodic", "percentile"),
    "Plug-in (CLT) CI": ("plugin", "clt"),
}


def target_of(caption):
    if "Q_\\star" in caption:
        return "opr"
    if "uniform" in caption:
        return "uniform"
    if "mostly-right" in caption or "right}\\mid s)=0.8" in caption:
        return "mostly_right"
    if "mostly-left" in caption or "right}\\mid s)=0.2" in caption:
        return "mostly_left"
    raise ValueError(caption)


def main(path, out):
    text = open(path, encoding="utf-8").read()
    rows = []
    for table in re.findall(r"\\begin\{table\}.*?\\end\{table\}", text, re.S):
        cap = re.search(r"\\caption\{(.*?)\}\n", table, re.S)
        if not cap or "Empirical coverage (nominal" not in cap.group(1):
            continue
        caption = cap.group(1)
        nominal = int(re.search(r"nominal \$(\d+)\\%", caption).group(1)) / 100
        horizon = int(re.search(r"\$T=(\d+)\$", caption).group(1))
        target = target_of(caption)
        heads = re.findall(r"\$[QV][^$]*\((\d(?:,\d)?)\)\$", table)
        assert [h for h in heads] == [e[2:-1] for e in ENTRIES], heads
        method = None
        lines = table.splitlines()
        i = 0
        while i < len(lines):
            line = lines[i]
            block = re.search(r"\\textbf\{(.*?)\}", line)
            if block:
                method = BLOCKS[block.group(1)]
            elif method and re.fullmatch(r"\s*\d+\s*", line):
                n = int(line)
                values = re.findall(r"(?<![!\w])(\d\.\d{3})", lines[i + 1] + lines[i + 2])
                assert len(values) == 9, (caption, n, values)
                for entry, v in zip(ENTRIES, values):
                    vq = "v" if entry[0] == "V" else "q"
                    tgt = f"opr_{vq}" if target == "opr" else f"ope_{vq}:{target}"
                    rows.append((method[0], method[1], tgt, entry, n, horizon, nominal, v))
                i += 2
            i += 1
    with open(out, "w", encoding="utf-8") as f:
        f.write("method,ci_type,target,entry,n,T,nominal,coverage\n")
        for r in rows:
            f.write(",".join(f'"{x}"' if "," in str(x) else str(x) for x in r) + "\n")
    print(f"{len(rows)} rows", file=sys.stderr)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
