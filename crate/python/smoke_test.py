"""Smoke test for the ialcpg_py extension module."""

import tempfile

import ialcpg_py as m


def main():
    assert m.tokenize("The cat, sat.") == ["the", "cat", ",", "sat", "."]
    assert m.normalize_answer("a. b.") == "a. b"
    assert abs(m.bleu(["the cat the cat"], [["the cat sat"]], 1) - 0.5) < 1e-12
    report = m.score(["the dog"], [["a dog", "the dog"]])
    assert report["rouge_l"] == 1.0, report

    vocab = m.Vocab(["alpha", "beta"])
    assert "alpha" in vocab and vocab.token(vocab.id("beta")) == "beta"

    passed, err, checked = m.gradcheck()
    assert passed and checked > 100, (err, checked)

    data = m.copy_corpus(1)
    assert len(data.example_ids("dev")) == 8
    config = m.TrainConfig(
        """
        d = 16
        n = 32
        e = 16
        band = 8
        chunk_sizes = [64]
        max_context = 64
        max_answer_len = 6
        min_stories = 2
        vocab_from_answers = true
        epochs = 30
        seed = 1
        init_std = 0.3
        embed_std = 1.0
        """
    )
    assert "no-pg" in m.ablations()
    trainer = m.Trainer(config, data)
    logs = trainer.run()
    assert logs[-1]["loss"] < logs[0]["loss"]
    scores, predictions = trainer.evaluate()
    print("dev after", trainer.epoch, "epochs:", scores)

    with tempfile.TemporaryDirectory() as tmp:
        trainer.model().save(tmp)
        model = m.Model.load(tmp)
    ex = data.example_ids("dev")[0]
    question, answers = data.example(ex)
    tokens, switches = model.decode(["the", "secret", "is", "red", "fox"], question, 6)
    # one switch value per emitted token, plus one for the stop step if reached
    assert len(switches) - len(tokens) in (0, 1)
    assert all(0.0 < p < 1.0 for p in switches)
    assert ex in predictions
    print("ok")


if __name__ == "__main__":
    main()
