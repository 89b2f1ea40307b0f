"""Regenerate configs/zambia_areas.csv, the frozen area roster for the
small-sample study template.

The roster is synthetic: real province and district names with placeholder
populations drawn once from the seed below, rounded to hundreds, and checked
in. Rerunning this script reproduces the checked-in file byte for byte;
changing the seed or the shares below makes a different (equally valid)
template.
"""
from pathlib import Path

import numpy as np

SEED = 20240817

# province -> (approximate population in millions, urban share, districts)
PROVINCES = {
    "Central": (1.9, 0.25, [
        "Chibombo", "Chisamba", "Chitambo", "Itezhi-Tezhi", "Kabwe",
        "Kapiri Mposhi", "Luano", "Mkushi", "Mumbwa", "Ngabwe", "Serenje",
    ]),
    "Copperbelt": (2.7, 0.78, [
        "Chililabombwe", "Chingola", "Kalulushi", "Kitwe", "Luanshya",
        "Lufwanyama", "Masaiti", "Mpongwe", "Mufulira", "Ndola",
    ]),
    "Eastern": (2.5, 0.18, [
        "Chadiza", "Chasefu", "Chipangali", "Chipata", "Kasenengwa",
        "Katete", "Lumezi", "Lundazi", "Lusangazi", "Mambwe", "Msoro",
        "Nyimba", "Petauke", "Sinda", "Vubwi",
    ]),
    "Luapula": (1.5, 0.20, [
        "Chembe", "Chiengi", "Chifunabuli", "Chipili", "Kawambwa", "Lunga",
        "Mansa", "Milenge", "Mwansabombwe", "Mwense", "Nchelenge", "Samfya",
    ]),
    "Lusaka": (3.3, 0.82, [
        "Chilanga", "Chongwe", "Kafue", "Luangwa", "Lusaka", "Rufunsa",
    ]),
    "Muchinga": (1.0, 0.18, [
        "Chama", "Chinsali", "Isoka", "Lavushimanda", "Mafinga", "Mpika",
        "Nakonde", "Shiwangandu",
    ]),
    "Northern": (1.5, 0.19, [
        "Chilubi", "Kaputa", "Kasama", "Lunte", "Lupososhi", "Luwingu",
        "Mbala", "Mporokoso", "Mpulungu", "Mungwi", "Nsama", "Senga",
    ]),
    "North-Western": (1.0, 0.24, [
        "Chavuma", "Ikelenge", "Kabompo", "Kalumbila", "Kasempa",
        "Manyinga", "Mufumbwe", "Mushindamo", "Mwinilunga", "Solwezi",
        "Zambezi",
    ]),
    "Southern": (2.0, 0.26, [
        "Chikankata", "Chirundu", "Choma", "Gwembe", "Kalomo", "Kazungula",
        "Livingstone", "Maamba", "Mazabuka", "Monze", "Namwala", "Pemba",
        "Siavonga", "Sinazongwe", "Zimba",
    ]),
    "Western": (1.0, 0.16, [
        "Kalabo", "Kaoma", "Limulunga", "Luampa", "Lukulu", "Mitete",
        "Mongu", "Mulobezi", "Mwandi", "Nalolo", "Nkeyema", "Senanga",
        "Sesheke", "Shangombo", "Sioma",
    ]),
}


def main() -> None:
    rng = np.random.default_rng(SEED)
    rows = []
    for province, (millions, urban_share, districts) in PROVINCES.items():
        total = millions * 1e6
        shares = rng.gamma(4.0, 1.0, len(districts))
        shares /= shares.sum()
        for district, share in zip(districts, shares):
            pop = total * share
            # urban share varies by district around the province level
            u = float(np.clip(urban_share * rng.uniform(0.5, 1.6), 0.02, 0.95))
            urban = int(round(pop * u, -2))
            rural = int(round(pop * (1 - u), -2))
            rural = max(rural, 10_000)
            urban = max(urban, 5_000)
            rows.append((district, province, rural, urban))
    out = Path(__file__).resolve().parents[1] / "configs" / "zambia_areas.csv"
    lines = ["area_id,admin1_id,pop_rural,pop_urban"]
    for district, province, rural, urban in rows:
        lines.append(f"{district},{province},{rural},{urban}")
    out.write_text("\n".join(lines) + "\n")
    total = sum(r + u for _, _, r, u in rows)
    print(f"wrote {out} ({len(rows)} areas, {total:,} persons)")


if __name__ == "__main__":
    main()
