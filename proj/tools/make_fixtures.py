#!/usr/bin/env python3
"""Regenerates the bundled mini fixtures under data/ (deterministic)."""
import json
import random
import sys
from pathlib import Path

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data")
rng = random.Random(20240611)

TOPICS = {
    "WOMEN": {
        "titles": [
            "CMV: Women are worse leaders than men",
            "CMV: Women should not work in engineering",
            "CMV: The gender pay gap is a myth",
            "CMV: Women are too emotional for politics",
            "CMV: Women belong at home with their children",
        ],
        "bodies": [
            "I think leadership needs toughness and women lack it.",
            "Engineering is a technical field and women are simply less interested in it.",
            "Women earn less because they choose easier jobs.",
            "Politics needs calm decisions and women react with feelings.",
            "Children need their mothers at home and careers get in the way.",
        ],
        "facts": [
            "Studies of company boards show that teams with women leaders perform as well as other teams.",
            "Women hold many senior roles in science, medicine and engineering today.",
            "Research finds no evidence that women are more emotional decision makers than men.",
            "Women make up about half of university graduates in many countries.",
            "Dr. Smith found that mixed teams solve problems faster than uniform teams.",
            "The pay gap remains even when women and men do the same job.",
            "Many successful leaders in history were women who led through crises.",
            "Women engineers design bridges, software and medical devices every day.",
            "Families benefit when both parents can choose to work.",
            "Talent is spread across all genders, so excluding women wastes skill.",
            "Countries with more women in parliament often pass stronger health policies.",
            "Equal opportunity helps the economy grow for everyone.",
        ],
    },
    "MIGRANTS": {
        "titles": [
            "CMV: Migrants steal jobs from local workers",
            "CMV: Migrants increase crime in our cities",
            "CMV: Migrants are a drain on public services",
            "CMV: Migrants refuse to integrate",
            "CMV: Borders should be closed to all migrants",
        ],
        "bodies": [
            "Every migrant who finds work takes a job that a local person could have had.",
            "Crime went up in my city after more migrants arrived.",
            "Hospitals and schools are full because of migrants.",
            "Migrants keep to themselves and never learn the language.",
            "We cannot afford more people so the borders must close.",
        ],
        "facts": [
            "Studies show that migrants create jobs by starting businesses and spending wages locally.",
            "Research finds no link between migration and higher crime rates.",
            "Migrants pay taxes that fund hospitals, schools and pensions.",
            "Many nurses and doctors in public hospitals are migrants.",
            "Most migrants learn the local language within a few years of arrival.",
            "Migrants often take jobs that local workers do not want to fill.",
            "The economy grows when migrants join the workforce.",
            "Children of migrants do as well in school as other children.",
            "Dr. Jones showed that migrant workers keep farms and care homes running.",
            "Migrants contribute more in taxes than they receive in benefits over their lives.",
            "Crime rates depend on poverty and policing, not on where people were born.",
            "Closing borders would leave many essential jobs empty.",
        ],
    },
    "MUSLIMS": {
        "titles": [
            "CMV: Muslims cannot fit into western society",
            "CMV: Islam is a violent religion",
            "CMV: Muslims do not respect women",
            "CMV: Muslim immigration should be banned",
            "CMV: Muslims support terrorism",
        ],
        "bodies": [
            "Muslim values are too different from ours to ever fit in.",
            "The religion itself teaches violence against others.",
            "Muslim men treat women as property.",
            "A ban would keep our country safe.",
            "Muslims do not speak out against terrorism.",
        ],
        "facts": [
            "Millions of Muslims live peacefully in western countries and work as doctors, teachers and engineers.",
            "Most victims of terrorism are Muslims themselves.",
            "Muslim leaders around the world have condemned terrorism many times.",
            "Surveys show that most Muslims value democracy and the rule of law.",
            "Muslim women serve as ministers, scientists and business leaders.",
            "Violence comes from extremists, not from ordinary believers of any faith.",
            "Dr. Ahmed found that Muslim communities volunteer and give to charity at high rates.",
            "A ban would punish innocent families for crimes they did not commit.",
            "Muslims have been part of western history for centuries.",
            "Judging a whole faith by a few criminals is unfair and wrong.",
            "Many Muslims help police stop extremist plots.",
            "Religious freedom protects every faith, including your own.",
        ],
    },
    "LGBT": {
        "titles": [
            "CMV: Gay people should not adopt children",
            "CMV: Being gay is a choice",
            "CMV: LGBT people are a threat to families",
            "CMV: Same sex marriage harms society",
            "CMV: LGBT topics should be banned in schools",
        ],
        "bodies": [
            "Children need a mother and a father to grow up well.",
            "People decide to be gay because it is fashionable.",
            "Traditional families are under attack from LGBT activists.",
            "Marriage has always been between a man and a woman.",
            "Kids are too young to learn about these things.",
        ],
        "facts": [
            "Studies show that children raised by gay parents do as well as other children.",
            "Research finds that sexual orientation is not a choice.",
            "LGBT people form loving families and raise children like everyone else.",
            "Countries with same sex marriage have not seen any harm to society.",
            "Learning about different families reduces bullying in schools.",
            "Dr. Brown showed that acceptance lowers suicide rates among young people.",
            "Equal marriage gives couples legal protection and stability.",
            "Many children in care find safe homes with gay parents.",
            "LGBT people have always existed in every culture.",
            "Respect for all families makes communities stronger.",
            "Supportive schools help every student learn better.",
            "Rights for some people do not take rights away from others.",
        ],
    },
}

CONNECTIVES = [
    "I disagree with this view.",
    "That is not what the evidence says.",
    "I think you should reconsider.",
    "Here is another way to look at it.",
    "You are generalizing from a few cases.",
]

BAD_COMMENTS = [
    "You are completely right and I agree.",
    "This is obvious to anyone who looks.",
    "Exactly, they are the problem.",
    "Finally someone says it.",
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    records = []
    hs_rows = []
    stance = []
    triples = []
    pairs = []
    cid = 0
    pid = 0
    for target, t in TOPICS.items():
        for i, (title, body) in enumerate(zip(t["titles"], t["bodies"])):
            pid += 1
            post_id = f"p{pid:02d}"
            records.append({"kind": "post", "id": post_id, "title": title, "body": body,
                            "targets": [target], "score": rng.randint(5, 500)})
            for j in range(4):
                cid += 1
                downvoted = (cid % 7 == 0)
                tie = (cid % 11 == 0)
                if downvoted:
                    text = rng.choice(BAD_COMMENTS) + " " + rng.choice(BAD_COMMENTS)
                    up, down = rng.randint(0, 4), rng.randint(5, 20)
                else:
                    facts = rng.sample(t["facts"], 2)
                    text = rng.choice(CONNECTIVES) + " " + " ".join(facts)
                    up = rng.randint(3, 80)
                    down = up if tie else rng.randint(0, up)
                records.append({"kind": "comment", "id": f"c{cid:03d}", "post_id": post_id, "body": text,
                                "up": up, "down": down, "delta": (not downvoted) and rng.random() < 0.2})

    hs_texts = {
        "WOMEN": "Women are too emotional to be leaders and should stay at home.",
        "MIGRANTS": "Migrants steal our jobs and bring crime to our cities.",
        "MUSLIMS": "Muslims are violent and support terrorism.",
        "LGBT": "Gay people should never be allowed to raise children.",
    }
    for k, (target, text) in enumerate(hs_texts.items()):
        hs_rows.append({"id": f"hs{k + 1}", "text": text, "target": target})

    # Stance statements: "pro" supports the group, "con" attacks it.
    for target, t in TOPICS.items():
        for n, fact in enumerate(t["facts"][:6]):
            stance.append({"id": f"{target.lower()}-pro-{n}", "text": fact, "target": target, "polarity": "pro"})
        for n, body in enumerate(t["bodies"]):
            stance.append({"id": f"{target.lower()}-con-{n}", "text": body, "target": target, "polarity": "con"})
        stance.append({"id": f"{target.lower()}-con-hs", "text": hs_texts[target], "target": target,
                       "polarity": "con"})

    # Semantic triples: a fact, a reworded fact on the same topic, a fact on another topic.
    targets = list(TOPICS)
    for ti, target in enumerate(targets):
        facts = TOPICS[target]["facts"]
        other = TOPICS[targets[(ti + 1) % len(targets)]]["facts"]
        for n in range(len(facts) - 1):
            triples.append({"anchor": facts[n], "positive": facts[n + 1], "negative": other[n], "target": target})
        triples.append({"anchor": hs_texts[target], "positive": TOPICS[target]["bodies"][0],
                        "negative": other[-1], "target": target})

    # Classifier pairs: counter = hs with a refuting fact; non-counter = hs with agreement.
    agree = BAD_COMMENTS + [
        "They are the problem and everyone knows it.",
        "I agree, things were better before.",
        "Yes, we should get rid of them.",
        "Nothing will change my mind about them.",
    ]
    for target, t in TOPICS.items():
        for fact in t["facts"]:
            pairs.append({"hs": hs_texts[target], "cn": fact, "label": 1})
        for body in t["bodies"]:
            pairs.append({"hs": hs_texts[target], "cn": body, "label": 0})
        for a in agree:
            pairs.append({"hs": hs_texts[target], "cn": a, "label": 0})

    def dump(name, rows):
        with open(OUT / name, "w") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")

    dump("mini_corpus.jsonl", records)
    dump("hs.jsonl", hs_rows)
    dump("stance.jsonl", stance)
    dump("semantic_triples.jsonl", triples)
    dump("classifier_pairs.jsonl", pairs)


if __name__ == "__main__":
    main()
