//! Deterministic multi-format corpora for desk-scale experiments.
//!
//! Eight generator event types are rendered in up to three annotation
//! formats. A format renames every event type and about half of the roles;
//! format 2 additionally wraps each event sentence in distractor sentences,
//! so its records look like short documents. A configurable fraction of the
//! event types appears in both training formats.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EventInstance, Span};
use crate::prompts::{parse_template, TemplateRegistry};

pub const GENERATOR_EVENT_TYPES: usize = 8;

#[derive(Clone, Copy)]
enum Filler {
    Person,
    Group,
    Place,
    Artifact,
    Instrument,
    Org,
}

const PERSONS: &[&str] = &[
    "john",
    "mary",
    "ahmed",
    "li wei",
    "maria lopez",
    "the president",
    "the minister",
    "a soldier",
    "the farmer",
    "dr. kim",
    "anna",
    "the mayor",
    "two students",
    "omar",
];
const GROUPS: &[&str] = &[
    "the rebels",
    "the army",
    "police",
    "the militia",
    "protesters",
    "troops",
    "the gang",
    "security forces",
    "the navy",
];
const PLACES: &[&str] = &[
    "paris",
    "london",
    "new york",
    "the city",
    "baghdad",
    "the village",
    "kyoto",
    "the border",
    "cairo",
    "the capital",
    "lagos",
    "the market",
];
const ARTIFACTS: &[&str] = &[
    "weapons",
    "the car",
    "grain",
    "oil",
    "the documents",
    "medicine",
    "a truck",
    "gold",
    "the painting",
];
const INSTRUMENTS: &[&str] = &[
    "a bomb", "rifles", "a knife", "missiles", "a drone", "grenades", "a rocket",
];
const ORGS: &[&str] = &[
    "the bank",
    "acme corp",
    "the ministry",
    "the hospital",
    "the school",
    "the union",
    "the company",
];

impl Filler {
    fn lexicon(self) -> &'static [&'static str] {
        match self {
            Filler::Person => PERSONS,
            Filler::Group => GROUPS,
            Filler::Place => PLACES,
            Filler::Artifact => ARTIFACTS,
            Filler::Instrument => INSTRUMENTS,
            Filler::Org => ORGS,
        }
    }
}

struct RoleDef {
    /// Role name in formats 1, 2 and 3.
    names: [&'static str; 3],
    filler: Filler,
    /// Word preceding the argument in sentences, empty for bare arguments.
    lead: &'static str,
    optional: bool,
}

struct TypeDef {
    names: [&'static str; 3],
    triggers: &'static [&'static str],
    prompt_verb: &'static str,
    /// Roles in surface order; the trigger sits after `trigger_after` roles.
    roles: &'static [RoleDef],
    trigger_after: usize,
}

const fn role(
    names: [&'static str; 3],
    filler: Filler,
    lead: &'static str,
    optional: bool,
) -> RoleDef {
    RoleDef {
        names,
        filler,
        lead,
        optional,
    }
}

const TYPES: [TypeDef; GENERATOR_EVENT_TYPES] = [
    TypeDef {
        names: ["Conflict.Attack", "attack.assault", "Violence:Strike"],
        triggers: &["attacked", "bombed", "raided", "struck"],
        prompt_verb: "attacked",
        roles: &[
            role(
                ["Attacker", "Attacker", "Assailant"],
                Filler::Group,
                "",
                false,
            ),
            role(["Target", "Victim", "Target"], Filler::Person, "", false),
            role(
                ["Instrument", "Weapon", "Weapon"],
                Filler::Instrument,
                "with",
                true,
            ),
            role(["Place", "Location", "Place"], Filler::Place, "in", true),
        ],
        trigger_after: 1,
    },
    TypeDef {
        names: ["Life.Marry", "life.wedding", "Family:Union"],
        triggers: &["married", "wed"],
        prompt_verb: "married",
        roles: &[
            role(["Person", "Spouse", "Person"], Filler::Person, "", false),
            role(["Person", "Spouse", "Person"], Filler::Person, "", false),
            role(["Place", "Location", "Location"], Filler::Place, "in", true),
        ],
        trigger_after: 1,
    },
    TypeDef {
        names: ["Movement.Transport", "transport.shipment", "Logistics:Move"],
        triggers: &["shipped", "moved", "transported", "delivered"],
        prompt_verb: "moved",
        roles: &[
            role(["Agent", "Transporter", "Agent"], Filler::Group, "", false),
            role(
                ["Artifact", "Artifact", "Cargo"],
                Filler::Artifact,
                "",
                false,
            ),
            role(["Origin", "Source", "Origin"], Filler::Place, "from", true),
            role(
                ["Destination", "Destination", "Destination"],
                Filler::Place,
                "to",
                true,
            ),
        ],
        trigger_after: 1,
    },
    TypeDef {
        names: ["Personnel.StartPosition", "employment.hire", "Work:Hiring"],
        triggers: &["hired", "recruited", "employed"],
        prompt_verb: "hired",
        roles: &[
            role(["Entity", "Employer", "Employer"], Filler::Org, "", false),
            role(["Person", "Employee", "Person"], Filler::Person, "", false),
            role(["Place", "Location", "Place"], Filler::Place, "in", true),
        ],
        trigger_after: 1,
    },
    TypeDef {
        names: ["Life.Die", "life.death", "Health:Fatality"],
        triggers: &["died", "perished"],
        prompt_verb: "died",
        roles: &[
            role(["Victim", "Deceased", "Victim"], Filler::Person, "", false),
            role(
                ["Instrument", "Cause", "Instrument"],
                Filler::Instrument,
                "from",
                true,
            ),
            role(["Place", "Location", "Location"], Filler::Place, "in", true),
        ],
        trigger_after: 1,
    },
    TypeDef {
        names: ["Transaction.Sell", "commerce.sale", "Trade:Sale"],
        triggers: &["sold", "traded"],
        prompt_verb: "sold",
        roles: &[
            role(["Seller", "Seller", "Vendor"], Filler::Org, "", false),
            role(
                ["Artifact", "Goods", "Artifact"],
                Filler::Artifact,
                "",
                false,
            ),
            role(["Buyer", "Buyer", "Buyer"], Filler::Person, "to", true),
        ],
        trigger_after: 1,
    },
    TypeDef {
        names: ["Justice.Arrest", "justice.detention", "Law:Arrest"],
        triggers: &["arrested", "detained", "jailed"],
        prompt_verb: "arrested",
        roles: &[
            role(["Agent", "Authority", "Agent"], Filler::Group, "", false),
            role(["Person", "Detainee", "Person"], Filler::Person, "", false),
            role(["Place", "Location", "Place"], Filler::Place, "in", true),
        ],
        trigger_after: 1,
    },
    TypeDef {
        names: ["Contact.Meet", "contact.meeting", "Social:Meeting"],
        triggers: &["met", "visited"],
        prompt_verb: "met",
        roles: &[
            role(
                ["Entity", "Participant", "Entity"],
                Filler::Person,
                "",
                false,
            ),
            role(
                ["Entity", "Participant", "Entity"],
                Filler::Person,
                "",
                false,
            ),
            role(["Place", "Location", "Place"], Filler::Place, "in", true),
        ],
        trigger_after: 1,
    },
];

const OPENERS: &[&str] = &[
    "yesterday",
    "on monday",
    "reports say",
    "according to sources ,",
    "earlier today",
    "last week",
    "officials said",
];
const DISTRACTORS: &[&str] = &[
    "{p} spoke to reporters in {l} .",
    "the weather in {l} was cold .",
    "{p} declined to comment .",
    "witnesses near {l} described the scene .",
    "{p} later travelled to {l} .",
];

/// Training corpora in formats 1 and 2 plus the templates for all formats.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticCorpora {
    pub d1: Vec<EventInstance>,
    pub d2: Vec<EventInstance>,
    pub templates: TemplateRegistry,
    /// Generator event types present in both corpora.
    pub n_shared_types: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<EventInstance>,
    pub dev: Vec<EventInstance>,
    pub test: Vec<EventInstance>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSplits {
    pub d1: Splits,
    pub d2: Splits,
    pub templates: TemplateRegistry,
    pub n_shared_types: usize,
}

/// Generator type indices used by formats 1 and 2.
fn type_assignment(overlap: f64) -> (Vec<usize>, Vec<usize>, usize) {
    let overlap = overlap.clamp(0.0, 1.0);
    let shared = (overlap * GENERATOR_EVENT_TYPES as f64).round() as usize;
    let rest = GENERATOR_EVENT_TYPES - shared;
    let only1 = rest.div_ceil(2);
    let mut f1: Vec<usize> = (0..shared).collect();
    f1.extend(shared..shared + only1);
    let mut f2: Vec<usize> = (0..shared).collect();
    f2.extend(shared + only1..GENERATOR_EVENT_TYPES);
    (f1, f2, shared)
}

/// Templates of every generator type in all three formats.
fn all_templates() -> TemplateRegistry {
    let mut reg = TemplateRegistry::new();
    for def in &TYPES {
        for f in 0..3 {
            let role_names: Vec<&str> = def.roles.iter().map(|r| r.names[f]).collect();
            let mut text = String::new();
            for (i, (r, name)) in def.roles.iter().zip(&role_names).enumerate() {
                if i == def.trigger_after {
                    text.push_str(def.prompt_verb);
                    text.push(' ');
                }
                if !r.lead.is_empty() && i >= def.trigger_after {
                    text.push_str(r.lead);
                    text.push(' ');
                }
                text.push_str(&format!("<{name}> "));
            }
            let tpl = parse_template(def.names[f], text.trim_end())
                .expect("generator templates are well formed");
            reg.insert(tpl);
        }
    }
    reg
}

fn words(phrase: &str) -> impl Iterator<Item = String> + '_ {
    phrase.split_whitespace().map(str::to_string)
}

fn render_event(rng: &mut ChaCha8Rng, def: &TypeDef, format: usize, id: String) -> EventInstance {
    let mut tokens: Vec<String> = Vec::new();
    let mut gold: BTreeMap<String, Vec<Span>> = BTreeMap::new();

    if format == 2 {
        let n = rng.random_range(1..=2);
        for _ in 0..n {
            push_distractor(rng, &mut tokens);
        }
    }
    if rng.random_bool(0.5) {
        tokens.extend(words(OPENERS.choose(rng).unwrap()));
    }

    // Fillers chosen up front so repeated roles never reuse a phrase.
    let mut used: Vec<&str> = Vec::new();
    let present: Vec<Option<&str>> = def
        .roles
        .iter()
        .map(|r| {
            if r.optional && !rng.random_bool(0.7) {
                return None;
            }
            let lex = r.filler.lexicon();
            let pick = loop {
                let c = *lex.choose(rng).unwrap();
                if !used.contains(&c) {
                    break c;
                }
            };
            used.push(pick);
            Some(pick)
        })
        .collect();

    // Optionally front the last present optional role ("in paris , ...").
    let fronted = def
        .roles
        .iter()
        .zip(&present)
        .enumerate()
        .rev()
        .find(|(_, (r, p))| r.optional && p.is_some())
        .map(|(i, _)| i)
        .filter(|_| rng.random_bool(0.3));

    let mut place_role = |tokens: &mut Vec<String>, i: usize, filler: &str| {
        let r = &def.roles[i];
        if !r.lead.is_empty() && i >= def.trigger_after {
            tokens.push(r.lead.to_string());
        }
        let start = tokens.len();
        tokens.extend(words(filler));
        gold.entry(r.names[format - 1].to_string())
            .or_default()
            .push(Span::new(start, tokens.len() - 1));
    };

    if let Some(i) = fronted {
        place_role(&mut tokens, i, present[i].unwrap());
        tokens.push(",".into());
    }
    let mut trigger = Span::new(0, 0);
    for (i, filler) in present.iter().enumerate() {
        if i == def.trigger_after {
            trigger = Span::new(tokens.len(), tokens.len());
            tokens.push(def.triggers.choose(rng).unwrap().to_string());
        }
        if let Some(f) = filler {
            if Some(i) != fronted {
                place_role(&mut tokens, i, f);
            }
        }
    }
    if def.trigger_after >= def.roles.len() {
        trigger = Span::new(tokens.len(), tokens.len());
        tokens.push(def.triggers.choose(rng).unwrap().to_string());
    }
    tokens.push(".".into());

    if format == 2 && rng.random_bool(0.5) {
        push_distractor(rng, &mut tokens);
    }

    let mut roles: Vec<String> = Vec::new();
    for r in def.roles {
        let name = r.names[format - 1].to_string();
        if !roles.contains(&name) {
            roles.push(name);
        }
    }
    EventInstance {
        id,
        tokens,
        event_type: def.names[format - 1].to_string(),
        trigger,
        roles,
        gold_args: gold,
        format_id: format as u8,
    }
}

fn push_distractor(rng: &mut ChaCha8Rng, tokens: &mut Vec<String>) {
    let pattern = DISTRACTORS.choose(rng).unwrap();
    let person = PERSONS.choose(rng).unwrap();
    let place = PLACES.choose(rng).unwrap();
    let text = pattern.replace("{p}", person).replace("{l}", place);
    tokens.extend(words(&text));
}

fn generate(
    rng: &mut ChaCha8Rng,
    types: &[usize],
    format: usize,
    n: usize,
    prefix: &str,
) -> Vec<EventInstance> {
    (0..n)
        .map(|i| {
            let t = *types.choose(rng).unwrap();
            render_event(rng, &TYPES[t], format, format!("{prefix}-{i:05}"))
        })
        .collect()
}

/// Two corpora over a shared vocabulary. A fraction `overlap` of the eight
/// generator event types appears in both, under different names.
pub fn make_synthetic_corpora(seed: u64, n1: usize, n2: usize, overlap: f64) -> SyntheticCorpora {
    let (t1, t2, shared) = type_assignment(overlap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = generate(&mut rng, &t1, 1, n1, "f1");
    let d2 = generate(&mut rng, &t2, 2, n2, "f2");
    SyntheticCorpora {
        d1,
        d2,
        templates: all_templates(),
        n_shared_types: shared,
    }
}

/// Train/dev/test splits for both formats. Each split draws from its own
/// seed-derived stream.
pub fn make_synthetic_splits(
    seed: u64,
    n1: usize,
    n2: usize,
    n_dev: usize,
    n_test: usize,
    overlap: f64,
) -> SyntheticSplits {
    let (t1, t2, shared) = type_assignment(overlap);
    let split = |salt: u64, types: &[usize], format: usize, n: usize, name: &str| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(salt));
        generate(&mut rng, types, format, n, &format!("f{format}-{name}"))
    };
    SyntheticSplits {
        d1: Splits {
            train: split(1, &t1, 1, n1, "train"),
            dev: split(2, &t1, 1, n_dev, "dev"),
            test: split(3, &t1, 1, n_test, "test"),
        },
        d2: Splits {
            train: split(4, &t2, 2, n2, "train"),
            dev: split(5, &t2, 2, n_dev, "dev"),
            test: split(6, &t2, 2, n_test, "test"),
        },
        templates: all_templates(),
        n_shared_types: shared,
    }
}

/// A third-format corpus over all generator types, for zero-shot evaluation.
pub fn make_heldout_corpus(seed: u64, n: usize) -> Vec<EventInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(7));
    let types: Vec<usize> = (0..GENERATOR_EVENT_TYPES).collect();
    generate(&mut rng, &types, 3, n, "f3")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_stats;
    use std::collections::BTreeSet;

    fn generator_types(data: &[EventInstance], format: usize) -> BTreeSet<usize> {
        data.iter()
            .map(|inst| {
                TYPES
                    .iter()
                    .position(|t| t.names[format - 1] == inst.event_type)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_overlap_shares_no_types() {
        let c = make_synthetic_corpora(0, 10, 10, 0.0);
        assert_eq!(c.n_shared_types, 0);
        let a = generator_types(&c.d1, 1);
        let b = generator_types(&c.d2, 2);
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn half_overlap_shares_four_types() {
        let c = make_synthetic_corpora(0, 400, 400, 0.5);
        assert_eq!(c.n_shared_types, 4);
        let a = generator_types(&c.d1, 1);
        let b = generator_types(&c.d2, 2);
        assert_eq!(a.intersection(&b).count(), 4);
        // Shared types keep distinct surface names per format.
        let names1: BTreeSet<_> = c.d1.iter().map(|i| i.event_type.clone()).collect();
        let names2: BTreeSet<_> = c.d2.iter().map(|i| i.event_type.clone()).collect();
        assert!(names1.is_disjoint(&names2));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            make_synthetic_corpora(0, 10, 10, 0.5),
            make_synthetic_corpora(0, 10, 10, 0.5)
        );
        assert_ne!(
            make_synthetic_corpora(0, 10, 10, 0.5).d1,
            make_synthetic_corpora(1, 10, 10, 0.5).d1
        );
    }

    #[test]
    fn instances_are_valid_and_templated() {
        let c = make_synthetic_corpora(3, 200, 200, 0.5);
        for inst in c.d1.iter().chain(&c.d2).chain(&make_heldout_corpus(3, 100)) {
            inst.validate().unwrap();
            let tpl = c.templates.get(&inst.event_type).unwrap();
            tpl.validate(&inst.roles).unwrap();
            assert!(inst.tokens[inst.trigger.start].len() > 1);
        }
    }

    #[test]
    fn stats_count_generated_arguments() {
        let c = make_synthetic_corpora(5, 10, 1, 0.5);
        let by_hand: usize =
            c.d1.iter()
                .map(|i| i.gold_args.values().map(|v| v.len()).sum::<usize>())
                .sum();
        let stats = corpus_stats(&c.d1);
        assert_eq!(stats.n_events, 10);
        assert_eq!(stats.n_docs, 10);
        assert_eq!(stats.n_args, by_hand);
    }
}
