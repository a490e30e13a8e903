use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bilou {
    Begin,
    Inside,
    Last,
    Unit,
}

impl Bilou {
    const ALL: [Bilou; 4] = [Bilou::Begin, Bilou::Inside, Bilou::Last, Bilou::Unit];

    fn letter(self) -> char {
        match self {
            Bilou::Begin => 'B',
            Bilou::Inside => 'I',
            Bilou::Last => 'L',
            Bilou::Unit => 'U',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Entity { label: usize, position: Bilou },
}

/// Entity labels and the BILOU tag space over them: tag 0 is `O`, then
/// B/I/L/U for each label in order, `4 * |labels| + 1` tags in all.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        LabelSet::new(labels)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Vec<String> {
        set.labels
    }
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("bad label name {l:?}")));
            }
            if labels[..i].contains(l) {
                return Err(Error::InvalidConfig(format!("duplicate label {l:?}")));
            }
        }
        Ok(LabelSet { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn tag_count(&self) -> usize {
        4 * self.labels.len() + 1
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_owned()))
    }

    pub fn tag_index(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Entity { label, position } => {
                1 + 4 * label + Bilou::ALL.iter().position(|p| *p == position).unwrap()
            }
        }
    }

    pub fn tag(&self, index: usize) -> Tag {
        assert!(index < self.tag_count(), "tag index out of range");
        if index == 0 {
            return Tag::Outside;
        }
        Tag::Entity {
            label: (index - 1) / 4,
            position: Bilou::ALL[(index - 1) % 4],
        }
    }

    pub fn tag_name(&self, index: usize) -> String {
        match self.tag(index) {
            Tag::Outside => "O".into(),
            Tag::Entity { label, position } => format!("{}-{}", position.letter(), self.labels[label]),
        }
    }

    /// Tag indices for an entity covering `len` consecutive tokens.
    pub fn span_tags(&self, label: usize, len: usize) -> Vec<usize> {
        let at = |position| self.tag_index(Tag::Entity { label, position });
        match len {
            0 => Vec::new(),
            1 => vec![at(Bilou::Unit)],
            n => {
                let mut tags = vec![at(Bilou::Begin)];
                tags.extend(std::iter::repeat_n(at(Bilou::Inside), n - 2));
                tags.push(at(Bilou::Last));
                tags
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_space_size() {
        let eighteen = LabelSet::new((0..18).map(|i| format!("L{i}"))).unwrap();
        assert_eq!(eighteen.tag_count(), 73);
        let set = LabelSet::new(["PERSON", "SECRET"]).unwrap();
        assert_eq!(set.tag_count(), 9);
        for i in 0..set.tag_count() {
            assert_eq!(set.tag_index(set.tag(i)), i);
        }
        assert_eq!(set.tag_name(0), "O");
        assert_eq!(set.tag_name(8), "U-SECRET");
    }

    #[test]
    fn span_tag_sequences() {
        let set = LabelSet::new(["PERSON"]).unwrap();
        let names = |v: Vec<usize>| v.into_iter().map(|t| set.tag_name(t)).collect::<Vec<_>>();
        assert_eq!(names(set.span_tags(0, 1)), ["U-PERSON"]);
        assert_eq!(names(set.span_tags(0, 3)), ["B-PERSON", "I-PERSON", "L-PERSON"]);
    }

    #[test]
    fn invalid_label_sets() {
        assert!(LabelSet::new(["A", "A"]).is_err());
        assert!(LabelSet::new([""]).is_err());
        assert!(matches!(
            LabelSet::new(["A"]).unwrap().index_of("B"),
            Err(Error::UnknownLabel(_))
        ));
    }
}
