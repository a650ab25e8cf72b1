//! Per-user chronological sequences with leave-one-out splits.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    pub user_id: u64,
    pub items: Vec<usize>,
}

impl UserSequence {
    /// Everything except the last two items.
    pub fn train(&self) -> &[usize] {
        &self.items[..self.items.len() - 2]
    }

    /// Second-to-last item.
    pub fn valid(&self) -> usize {
        self.items[self.items.len() - 2]
    }

    /// Last item.
    pub fn test(&self) -> usize {
        self.items[self.items.len() - 1]
    }

    /// History used to predict the validation item.
    pub fn valid_history(&self) -> &[usize] {
        self.train()
    }

    /// History used to predict the test item.
    pub fn test_history(&self) -> &[usize] {
        &self.items[..self.items.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionDataset {
    n_items: usize,
    users: Vec<UserSequence>,
    popularity: Vec<u64>,
}

impl InteractionDataset {
    pub fn new(n_items: usize, users: Vec<UserSequence>) -> Result<Self> {
        let mut popularity = vec![0u64; n_items];
        for u in &users {
            if u.items.len() < 3 {
                return Err(Error::Data(format!("user {} has {} interactions, need at least 3", u.user_id, u.items.len())));
            }
            if let Some(&bad) = u.items.iter().find(|&&i| i >= n_items) {
                return Err(Error::Data(format!("user {} references item {bad} outside catalog of {n_items}", u.user_id)));
            }
            for &i in u.train() {
                popularity[i] += 1;
            }
        }
        Ok(Self { n_items, users, popularity })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn users(&self) -> &[UserSequence] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Train-split interaction count per item.
    pub fn popularity(&self) -> &[u64] {
        &self.popularity
    }

    pub fn total_train_interactions(&self) -> usize {
        self.users.iter().map(|u| u.train().len()).sum()
    }

    /// `user_id item item ...` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for u in &self.users {
            write!(out, "{}", u.user_id).expect("write to string");
            for i in &u.items {
                write!(out, " {i}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn from_reader(reader: impl BufRead, n_items: usize) -> Result<Self> {
        let mut users = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(uid) = fields.next() else { continue };
            let parse_err = |what: &str| Error::Format(format!("interactions line {}: bad {what}", lineno + 1));
            let user_id = uid.parse().map_err(|_| parse_err("user id"))?;
            let items = fields.map(|f| f.parse().map_err(|_| parse_err("item id"))).collect::<Result<Vec<usize>>>()?;
            users.push(UserSequence { user_id, items });
        }
        Self::new(n_items, users)
    }

    pub fn load(path: &Path, n_items: usize) -> Result<Self> {
        Self::from_reader(BufReader::new(fs::File::open(path)?), n_items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_popularity() {
        let ds = InteractionDataset::new(
            5,
            vec![UserSequence { user_id: 7, items: vec![0, 1, 2, 3] }, UserSequence { user_id: 8, items: vec![1, 4, 0] }],
        )
        .unwrap();
        let u = &ds.users()[0];
        assert_eq!(u.train(), &[0, 1]);
        assert_eq!((u.valid(), u.test()), (2, 3));
        assert_eq!(u.test_history(), &[0, 1, 2]);
        // Only train prefixes count: user 8 contributes item 1 alone.
        assert_eq!(ds.popularity(), &[1, 2, 0, 0, 0]);
    }

    #[test]
    fn rejects_short_or_out_of_range() {
        assert!(InteractionDataset::new(3, vec![UserSequence { user_id: 0, items: vec![0, 1] }]).is_err());
        assert!(InteractionDataset::new(3, vec![UserSequence { user_id: 0, items: vec![0, 1, 3] }]).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let text = "3 0 1 2\n9 2 1 0 1\n";
        let ds = InteractionDataset::from_reader(text.as_bytes(), 3).unwrap();
        assert_eq!(ds.to_text(), text);
        assert!(InteractionDataset::from_reader("x 1 2 3\n".as_bytes(), 4).is_err());
    }
}
