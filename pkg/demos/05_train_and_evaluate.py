"""Train the tiny profile on ten synthetic documents until it memorises them."""
from topdown_drs.corpus import SyntheticConfig, build_vocab, generate_synthetic
from topdown_drs.model import Model, profile
from topdown_drs.training import TrainConfig, evaluate, train

docs = generate_synthetic(SyntheticConfig(n_docs=10, edu_count_range=(2, 6), seed=11))
model = Model.create(profile("tiny"), build_vocab(docs), seed=0)


def show(rec):
    if rec["type"] == "epoch" and rec["epoch"] % 10 == 0:
        print(f"epoch {rec['epoch']:3d}  L {rec['train_L']:8.3f}  L_s {rec['train_L_s']:7.3f}  "
              f"train full F1 {rec['dev_full_micro']:5.1f}")


# training documents double as the dev set so the log shows training F1
result = train(model, docs, docs, TrainConfig(epochs=60, batch_size=1, dropout=0.0), on_record=show)
model.restore(result.best)
print(evaluate(model, docs).to_text())
