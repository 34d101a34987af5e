//! Event-type prompt templates with named role slots.
//!
//! Template text marks slots with angle brackets, e.g.
//! `<Person> married <Person> at <Place> ( and <Place> )`. Every slot becomes
//! exactly one template token; the same role may fill several slots.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TemplateToken {
    Word(String),
    Slot(String),
}

impl TemplateToken {
    /// Surface form fed to the backbone; slots read as their role name.
    pub fn text(&self) -> &str {
        match self {
            TemplateToken::Word(w) | TemplateToken::Slot(w) => w,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub role: String,
    pub positions: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub event_type: String,
    pub tokens: Vec<TemplateToken>,
    pub slots: Vec<Slot>,
}

impl PromptTemplate {
    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(TemplateToken::text).collect()
    }

    /// Slot indices carrying `role`, in template order.
    pub fn slots_for_role(&self, role: &str) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rejects slot-less templates and slots naming roles outside `roles`.
    pub fn validate(&self, roles: &[String]) -> Result<()> {
        if self.slots.is_empty() {
            return Err(Error::TemplateInvalid {
                event_type: self.event_type.clone(),
                message: "template has no slots".into(),
            });
        }
        if let Some(slot) = self.slots.iter().find(|s| !roles.contains(&s.role)) {
            return Err(Error::TemplateInvalid {
                event_type: self.event_type.clone(),
                message: format!("slot role {:?} is not in the role registry", slot.role),
            });
        }
        Ok(())
    }

    pub fn roles(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for s in &self.slots {
            if !seen.contains(&s.role.as_str()) {
                seen.push(&s.role);
            }
        }
        seen
    }
}

impl std::fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match tok {
                TemplateToken::Word(w) => f.write_str(w)?,
                TemplateToken::Slot(r) => write!(f, "<{r}>")?,
            }
        }
        Ok(())
    }
}

pub fn parse_template(event_type: &str, text: &str) -> Result<PromptTemplate> {
    let err = |column: usize, message: &str| Error::TemplateParse {
        event_type: event_type.to_string(),
        column,
        message: message.to_string(),
    };
    let mut tokens = Vec::new();
    let mut slots = Vec::new();
    let mut word = String::new();
    let mut chars = text.char_indices().peekable();

    fn flush(word: &mut String, tokens: &mut Vec<TemplateToken>) {
        if !word.is_empty() {
            tokens.push(TemplateToken::Word(std::mem::take(word)));
        }
    }

    while let Some((col, c)) = chars.next() {
        match c {
            '<' => {
                flush(&mut word, &mut tokens);
                let mut role = String::new();
                let mut closed = false;
                for (inner_col, inner) in chars.by_ref() {
                    match inner {
                        '>' => {
                            closed = true;
                            break;
                        }
                        '<' => return Err(err(inner_col + 1, "nested '<' inside slot")),
                        other => role.push(other),
                    }
                }
                if !closed {
                    return Err(err(col + 1, "unclosed '<'"));
                }
                let role = role.trim();
                if role.is_empty() || role.contains(char::is_whitespace) {
                    return Err(err(col + 1, "slot role must be one non-empty word"));
                }
                let pos = tokens.len();
                tokens.push(TemplateToken::Slot(role.to_string()));
                slots.push(Slot {
                    role: role.to_string(),
                    positions: pos..pos + 1,
                });
            }
            '>' => return Err(err(col + 1, "unmatched '>'")),
            c if c.is_whitespace() => flush(&mut word, &mut tokens),
            c => word.push(c),
        }
    }
    flush(&mut word, &mut tokens);
    Ok(PromptTemplate {
        event_type: event_type.to_string(),
        tokens,
        slots,
    })
}

/// Event type → template, as read from a `EVENT_TYPE<TAB>template` file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.event_type.clone(), template);
    }

    pub fn get(&self, event_type: &str) -> Result<&PromptTemplate> {
        self.templates
            .get(event_type)
            .ok_or_else(|| Error::MissingTemplate(event_type.to_string()))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reg = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (event_type, template) =
                line.split_once('\t').ok_or_else(|| Error::MalformedLine {
                    line: i + 1,
                    message: "expected EVENT_TYPE<TAB>template".into(),
                })?;
            reg.insert(parse_template(event_type.trim(), template)?);
        }
        Ok(reg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_tsv(&self) -> String {
        self.templates
            .values()
            .map(|t| format!("{}\t{}\n", t.event_type, t))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MARRY: &str = "<Person> married <Person> at <Place> ( and <Place> )";

    #[test]
    fn marry_template_has_four_slots() {
        let t = parse_template("Life.Marry", MARRY).unwrap();
        let roles: Vec<_> = t.slots.iter().map(|s| s.role.as_str()).collect();
        assert_eq!(roles, ["Person", "Person", "Place", "Place"]);
        assert_eq!(t.slots_for_role("Place"), vec![2, 3]);
        assert!(t.slots_for_role("Victim").is_empty());
        assert_eq!(t.to_string(), MARRY);
    }

    #[test]
    fn slotless_template_parses_but_fails_validation() {
        let t = parse_template("E", "no slots here").unwrap();
        assert!(t.slots.is_empty());
        assert!(t.validate(&["A".into()]).is_err());
    }

    #[test]
    fn simple_positions() {
        let t = parse_template("E", "<A> x <B>").unwrap();
        assert_eq!(
            t.slots[0],
            Slot {
                role: "A".into(),
                positions: 0..1
            }
        );
        assert_eq!(
            t.slots[1],
            Slot {
                role: "B".into(),
                positions: 2..3
            }
        );
        assert_eq!(t.token_texts(), ["A", "x", "B"]);
        let rep = parse_template("E", "<A> x <A>").unwrap();
        assert_eq!(rep.slots_for_role("A"), vec![0, 1]);
    }

    #[test]
    fn unbalanced_brackets_report_column() {
        match parse_template("E", "<A> x <B") {
            Err(Error::TemplateParse { column, .. }) => assert_eq!(column, 7),
            other => panic!("unexpected {other:?}"),
        }
        match parse_template("E", "A> x") {
            Err(Error::TemplateParse { column, .. }) => assert_eq!(column, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_role_rejected() {
        let t = parse_template("E", "<A> x <B>").unwrap();
        assert!(t.validate(&["A".into(), "B".into()]).is_ok());
        assert!(matches!(
            t.validate(&["A".into()]),
            Err(Error::TemplateInvalid { .. })
        ));
    }

    #[test]
    fn registry_round_trip() {
        let text = "Life.Marry\t<Person> married <Person>\nConflict.Attack\t<Attacker> attacked <Target>\n";
        let reg = TemplateRegistry::parse(text).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(TemplateRegistry::parse(&reg.to_tsv()).unwrap(), reg);
        assert!(matches!(reg.get("Nope"), Err(Error::MissingTemplate(_))));
    }

    fn template_text() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            "[a-z()]{1,6}".prop_map(|w| w),
            "[A-Z][a-z]{0,5}".prop_map(|r| format!("<{r}>")),
        ];
        prop::collection::vec(piece, 0..10).prop_map(|ps| ps.join(" "))
    }

    proptest! {
        #[test]
        fn reserialize_is_identity(text in template_text()) {
            let t = parse_template("E", &text).unwrap();
            prop_assert_eq!(t.to_string(), text);
        }

        #[test]
        fn role_slots_partition_all_slots(text in template_text()) {
            let t = parse_template("E", &text).unwrap();
            let mut all: Vec<usize> = t.roles().iter().flat_map(|r| t.slots_for_role(r)).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..t.slots.len()).collect::<Vec<_>>());
        }
    }
}
