"""The 47 aggregated medical-code categories and the event types."""

from __future__ import annotations

from dataclasses import dataclass

PROCEDURE = "procedure"
DIAGNOSIS = "diagnosis"
MEDICATION = "medication"

EVENT_TYPES = ("locoregional", "metastatic", "second_cancer")


@dataclass(frozen=True)
class CodeCategory:
    name: str
    kinds: tuple[str, ...]


_PROCEDURES = [
    "Axillary surgery",
    "Breast biopsy",
    "Breast cytology",
    "Breast imaging",
    "Lumpectomy",
    "Lumpectomy/Axillary surgery",
    "Mastectomy",
    "Mastectomy/Axillary surgery",
    "Node cytology",
    "Whole body imaging",
]
# built from both procedure and diagnosis raw codes, one entry each
_DUAL = ["Chemotherapy", "Radiotherapy"]
_DIAGNOSES = [
    "Breast Cancer",
    "Metastasis",
    "Node",
    "Other cancer",
    "Palliative care",
    "Personal history of BC",
]
_MEDICATIONS = [
    "Anastrozole", "Bevacizumab", "BYL719", "Capecitabine", "Cyclophosphamide",
    "Docetaxel", "Doxorubicine", "Epirubicine", "Eribuline", "Etoposide",
    "Everolimus", "Exemestane", "Fluorouracile", "Fulvestrant", "Gemcitabine",
    "Gosereline", "Lapatinib", "Letrozole", "Leuproreline", "Melphalan",
    "Methotrexate", "Mitomycine", "Paclitaxel", "Palbociclib", "Pertuzumab",
    "Tamoxifen", "Trastuzumab", "Triptoreline", "Vinorelbine",
]

METASTATIC_DRUGS = frozenset({
    "Bevacizumab", "BYL719", "Capecitabine", "Eribuline", "Etoposide",
    "Everolimus", "Fulvestrant", "Gemcitabine", "Lapatinib", "Melphalan",
    "Methotrexate", "Mitomycine", "Palbociclib",
})
BREAST_SURGERY = frozenset({
    "Lumpectomy", "Lumpectomy/Axillary surgery", "Mastectomy", "Mastectomy/Axillary surgery",
})


class Vocabulary:
    """Ordered code categories; the position of a name is its code index."""

    def __init__(self, categories: list[CodeCategory]):
        names = [c.name for c in categories]
        if len(set(names)) != len(names):
            raise ValueError("duplicate code names")
        for n in names:
            if any(sep in n for sep in "\t;:,\n"):
                raise ValueError(f"code name {n!r} contains a reserved separator")
        self.categories = tuple(categories)
        self.names = tuple(names)
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown code name {name!r}") from None

    def indices(self, names) -> frozenset[int]:
        return frozenset(self.index(n) for n in names)

    def kinds(self, name: str) -> tuple[str, ...]:
        return self.categories[self.index(name)].kinds


def default_vocabulary() -> Vocabulary:
    cats = [CodeCategory(n, (PROCEDURE,)) for n in _PROCEDURES]
    cats += [CodeCategory(n, (PROCEDURE, DIAGNOSIS)) for n in _DUAL]
    cats += [CodeCategory(n, (DIAGNOSIS,)) for n in _DIAGNOSES]
    cats += [CodeCategory(n, (MEDICATION,)) for n in _MEDICATIONS]
    cats.sort(key=lambda c: c.name.lower())
    return Vocabulary(cats)


VOCAB = default_vocabulary()
