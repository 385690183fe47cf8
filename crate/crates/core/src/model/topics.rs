use super::TopicRnn;
use crate::{Error, Result};

/// For each topic row of `B`, the `n` non-stop words with the largest
/// weights, descending; ties go to the lower token id. `<unk>` and `<eos>`
/// are not words and are never listed.
pub fn top_topic_words(model: &TopicRnn, n: usize) -> Result<Vec<Vec<String>>> {
    let vocab = &model.vocab;
    let words: Vec<usize> = vocab
        .bow_tokens()
        .iter()
        .copied()
        .filter(|&id| id != vocab.unk_id() && id != vocab.eos_id())
        .collect();
    if n > words.len() {
        return Err(Error::Config(format!("asked for {n} words but only {} topic words exist", words.len())));
    }
    let b = model.param("topic_words")?;
    let (k, _) = b.dims2().expect("matrix");
    Ok((0..k)
        .map(|topic| {
            let row = b.row(topic);
            let mut ids = words.clone();
            ids.sort_by(|&a, &c| row[c].total_cmp(&row[a]).then(a.cmp(&c)));
            ids.into_iter()
                .take(n)
                .map(|id| vocab.token(id).to_string())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::cells::CellKind;

    #[test]
    fn zero_matrix_uses_id_order() {
        let m = tiny_model(CellKind::Rnn, 10, 2, 2, 2, 0, 0.0);
        let topics = top_topic_words(&m, 4).unwrap();
        // w0..w2 are stop words.
        assert_eq!(topics[0], vec!["w3", "w4", "w5", "w6"]);
        assert_eq!(topics[0], topics[1]);
    }

    #[test]
    fn one_hot_heads_its_topic() {
        let mut m = tiny_model(CellKind::Rnn, 10, 2, 2, 2, 0, 0.0);
        let law = m.vocab.id("w5").unwrap();
        m.params.get_mut("topic_words").unwrap().set2(0, law, 1.0);
        let topics = top_topic_words(&m, 3).unwrap();
        assert_eq!(topics[0][0], "w5");
        assert_ne!(topics[1][0], "w5");
    }

    #[test]
    fn stop_words_never_listed_and_n_bounded() {
        let m = tiny_model(CellKind::Rnn, 10, 2, 3, 2, 4, 1.0);
        let topics = top_topic_words(&m, 5).unwrap();
        assert_eq!(topics.len(), 3);
        for t in &topics {
            assert_eq!(t.len(), 5);
            assert!(t.iter().all(|w| !["w0", "w1", "w2", "<unk>", "<eos>"].contains(&w.as_str())));
        }
        assert!(top_topic_words(&m, 6).is_err());
    }
}
