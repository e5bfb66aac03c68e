"""Builds the tiny RoBERTa fixture and prints reference values from HF transformers.

    python3 tiny_roberta.py ../fixtures/tiny-roberta

Writes config.json, model.safetensors (with a `roberta.` prefix and an unused
`lm_head.bias`), vocab.json, merges.txt and tokenizer.json, then prints Rust
constants: token ids, CLS and masked-mean hidden states computed in float64, and
gradients of a squared-error loss on the CLS vector.
"""
import json
import os
import sys

import torch
from safetensors.torch import save_file
from transformers import RobertaConfig, RobertaModel, RobertaTokenizer


def bytes_to_unicode():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return [chr(c) for c in cs]


MERGES = [("Ġ", "t"), ("h", "e"), ("Ġt", "he"), ("i", "n"), ("e", "r"), ("Ġ", "a"), ("Ġ", "s"), ("a", "d")]
TEXTS = ["I feel so sad for them.", "the theme is in there", "a"]
MAX_LEN = 12


def main(out):
    os.makedirs(out, exist_ok=True)
    vocab = {"<s>": 0, "<pad>": 1, "</s>": 2, "<unk>": 3}
    for ch in bytes_to_unicode():
        vocab[ch] = len(vocab)
    for a, b in MERGES:
        vocab[a + b] = len(vocab)
    vocab["<mask>"] = len(vocab)
    with open(os.path.join(out, "vocab.json"), "w") as f:
        json.dump(vocab, f, ensure_ascii=False)
    with open(os.path.join(out, "merges.txt"), "w") as f:
        f.write("#version: 0.2\n")
        for a, b in MERGES:
            f.write(f"{a} {b}\n")
    tok = RobertaTokenizer(vocab=os.path.join(out, "vocab.json"), merges=os.path.join(out, "merges.txt"))
    tok.backend_tokenizer.save(os.path.join(out, "tokenizer.json"))

    config = RobertaConfig(
        vocab_size=len(vocab), hidden_size=16, num_hidden_layers=2, num_attention_heads=4,
        intermediate_size=32, max_position_embeddings=40, type_vocab_size=1, pad_token_id=1,
        bos_token_id=0, eos_token_id=2, layer_norm_eps=1e-5, hidden_act="gelu",
    )
    torch.manual_seed(7)
    model = RobertaModel(config, add_pooling_layer=True)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.2 * torch.randn_like(p))
    config.to_json_file(os.path.join(out, "config.json"))
    state = {"roberta." + k: v.contiguous() for k, v in model.state_dict().items() if "position_ids" not in k}
    state["lm_head.bias"] = torch.zeros(len(vocab))
    save_file(state, os.path.join(out, "model.safetensors"))

    enc = tok(TEXTS, max_length=MAX_LEN, truncation=True, padding=True, return_tensors="pt")
    ids, mask = enc["input_ids"], enc["attention_mask"]
    model = model.double().eval()
    for p in model.parameters():
        p.requires_grad_(True)
    hidden = model(input_ids=ids, attention_mask=mask).last_hidden_state
    cls = hidden[:, 0, :]
    m = mask.unsqueeze(-1).double()
    mean = (hidden * m).sum(1) / m.sum(1)

    w = torch.linspace(-1.0, 1.0, 16, dtype=torch.float64)
    y = torch.tensor([1.0, 4.0, 7.0], dtype=torch.float64)
    loss = ((cls @ w + 0.5 - y) ** 2).mean()
    loss.backward()
    params = dict(model.named_parameters())

    def rust(name, rows):
        print(f"const {name}: &[&[f64]] = &[")
        for r in rows:
            print("    &[" + ", ".join(repr(float(v)) for v in r) + "],")
        print("];")

    print("const IDS: &[&[u32]] = &[")
    for r in ids.tolist():
        print("    &[" + ", ".join(str(v) for v in r) + "],")
    print("];")
    rust("CLS", cls.detach().tolist())
    rust("MEAN", mean.detach().tolist())
    print(f"const LOSS: f64 = {loss.item()!r};")
    picks = [
        ("embeddings.LayerNorm.weight", lambda g: g[:4]),
        ("encoder.layer.0.attention.self.query.weight", lambda g: g[0, :4]),
        ("encoder.layer.0.attention.output.LayerNorm.bias", lambda g: g[:4]),
        ("encoder.layer.1.intermediate.dense.weight", lambda g: g[3, :4]),
        ("encoder.layer.1.output.dense.bias", lambda g: g[:4]),
        ("embeddings.position_embeddings.weight", lambda g: g[2, :4]),
        ("embeddings.word_embeddings.weight", lambda g: g[int(ids[0, 1]), :4]),
    ]
    print("const GRADS: &[(&str, &[f64])] = &[")
    for name, pick in picks:
        vals = pick(params[name].grad).tolist()
        print(f'    ("{name}", &[' + ", ".join(repr(float(v)) for v in vals) + "]),")
    print("];")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tiny-roberta")
