"""Regenerates toy_corpus.txt and halogen_pairs.csv.

Every string is padded with a polyether chain to exactly LENGTH tokens, so
both corpora carry enough tokens per string for a memorizing model to reach a
low per-token NLL. RDKit, when installed, double-checks validity.
"""

import re
from pathlib import Path

LENGTH = 119

TOKEN = re.compile(r"\[[^\]]+\]|Cl|Br|%\d\d|[BCNOPSFIbcnops*\-=#:/\\().\d]")

HEADS = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "c1ccc2[nH]ccc2c1",
    "NC(=O)c1cccnc1",
    "n1ccccc1CCO",
    "OCC(O)CO",
    "o1cccc1C(=O)",
    "S=C(N)N",
    "s1cccc1C(=O)O",
    "FC(F)(F)c1ccc(O)cc1",
    "ClCCOc1ccccc1",
    "BrCC(=O)NC",
    "ICc1ccccc1",
    "P(=O)(O)(O)OCC",
    "B(O)(O)c1ccccc1",
    "[nH]1cccc1C(=O)N",
    "[NH3+]C(C(=O)[O-])",
    "[O-][N+](=O)c1ccccc1",
    "[N+](C)(C)(C)CCO",
    "[C@@H](N)(C)C(=O)O",
    "[C@H](O)(CC)C",
    "[2H]C([2H])([2H])Oc1ccccc1",
    "[13CH3]OC(=O)CC",
    "[Na+].[O-]C(=O)c1ccccc1",
    "[Si](C)(C)(C)OCC",
    "[S-]C(=S)N(C)C",
    "[Cl-].C[N+](C)(C)C",
    "[K+].[O-]S(=O)(=O)c1ccc(C)cc1",
    "[CH3]CCCCO",
    "[OH]c1ccc(Cl)cc1",
    "[NH2]CCc1ccccc1",
    "[H]C(=O)c1ccccc1",
    "[Br-].CC[n+]1ccccc1",
]

R_GROUPS = [
    "C", "CC", "CCC", "C(C)C", "O", "OC", "OCC", "N", "NC", "N(C)C",
    "C(=O)O", "C(=O)N", "C(=O)C", "C#N", "CO", "CN", "CCO", "CCN", "C(=O)OC", "NC(=O)C",
    "S(=O)(=O)N", "SC", "C=O", "OC(=O)C", "CC(=O)O", "C2CC2", "C2CCCC2", "C2CCCCC2", "N2CCCC2", "N2CCOCC2",
    "N2CCNCC2", "OCc2ccccc2", "Cc2ccccc2", "C(C)(C)C", "CCCC", "OC(C)C", "C(=O)NC", "C(=O)N(C)C", "NS(=O)(=O)C", "CC#N",
    "C=C", "C#C", "OCCO", "NCC(=O)O", "c2ccccc2", "c2ccncc2", "C(=O)OCC", "CC(C)O", "NC(N)=O", "OCCN",
]

# Each pattern starts with a carbon that can take the chain.
PATTERNS = ["c1cc({x})ccc1{r}", "C(C{x}){r}", "c1c({x})cccc1{r}", "C({r})c1ccccc1{x}"]


def tokens(smiles):
    out = TOKEN.findall(smiles)
    assert "".join(out) == smiles, smiles
    return out


def chain(n, ending):
    """A polyether run of n tokens; `ending` is "start" or "end" for the end
    that bonds to the head, which is always a carbon."""
    unit = "CCO" if ending == "start" else "OCC"
    text = (unit * (n // 3 + 1))
    return text[:n] if ending == "start" else text[-n:]


def padded_after(head):
    return head + chain(LENGTH - len(tokens(head)), "start")


def padded_before(head):
    return chain(LENGTH - len(tokens(head)), "end") + head


def check(smiles):
    assert len(tokens(smiles)) == LENGTH, smiles
    try:
        from rdkit import Chem, RDLogger
    except ImportError:
        return
    RDLogger.DisableLog("rdApp.*")
    assert Chem.MolFromSmiles(smiles) is not None, smiles


def canonical(smiles):
    try:
        from rdkit import Chem
    except ImportError:
        return smiles
    return Chem.MolToSmiles(Chem.MolFromSmiles(smiles))


def main():
    here = Path(__file__).parent
    toy = [padded_after(h) for h in HEADS]
    assert len({tokens(s)[0] for s in toy}) == len(toy)
    for s in toy:
        check(s)
    (here / "toy_corpus.txt").write_text("\n".join(toy) + "\n")

    rows = []
    for target, x in [("A", "Cl"), ("B", "F")]:
        for r in R_GROUPS:
            for p in PATTERNS:
                s = padded_before(p.format(x=x, r=r))
                check(s)
                rows.append((s, target))
    assert len({canonical(s) for s, _ in rows}) == len(rows) == 400
    lines = ["smiles,target"] + [f"{s},{t}" for s, t in rows]
    (here / "halogen_pairs.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
