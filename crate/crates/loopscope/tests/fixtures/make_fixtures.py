"""Regenerate the reference fixtures used by the loopscope integration tests.

Requires torch, transformers, safetensors and tokenizers. Run from this
directory: python make_fixtures.py
"""
import json
import os

import torch
from safetensors.torch import save_file
from tokenizers import Tokenizer, models, pre_tokenizers, decoders, trainers
from transformers import GPTNeoXConfig, GPTNeoXForCausalLM

HERE = os.path.dirname(os.path.abspath(__file__))
SEQUENCES = [[1, 5, 9, 2], [0], [63, 62, 10, 11, 12, 13, 14, 15, 16, 3, 3, 3, 40, 41]]


def tiny_neox(name, dtype, **overrides):
    torch.manual_seed(1234)
    cfg = dict(hidden_size=48, num_attention_heads=4, num_hidden_layers=2, vocab_size=64,
               intermediate_size=96, rotary_pct=0.5, max_position_embeddings=128)
    cfg.update(overrides)
    config = GPTNeoXConfig(**cfg)
    model = GPTNeoXForCausalLM(config).eval()
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(0.0, 0.3)
        for n, p in model.named_parameters():
            if "layernorm" in n or "layer_norm" in n:
                p.add_(1.0 if n.endswith("weight") else 0.0)
    state = {k: v.detach().to(dtype).contiguous() for k, v in model.state_dict().items()
             if not k.endswith(("attention.bias", "masked_bias", "inv_freq"))}
    # logits come from the stored (possibly rounded) weights
    model.load_state_dict({k: v.to(torch.float32) for k, v in state.items()}, strict=False)
    out = os.path.join(HERE, name)
    os.makedirs(out, exist_ok=True)
    save_file(state, os.path.join(out, "model.safetensors"))
    config.save_pretrained(out)
    refs = []
    with torch.no_grad():
        for seq in SEQUENCES:
            ids = torch.tensor([seq])
            logits = model(ids).logits[0].tolist()
            greedy = model.generate(ids, attention_mask=torch.ones_like(ids), max_new_tokens=12, do_sample=False,
                                    pad_token_id=0)[0, len(seq):].tolist()
            refs.append({"tokens": seq, "logits": logits, "greedy": greedy})
    with open(os.path.join(out, "reference.json"), "w") as f:
        json.dump(refs, f)


def bpe():
    text = open(os.path.join(HERE, "corpus.txt"), encoding="utf-8").read().splitlines()
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(vocab_size=600, special_tokens=["<|endoftext|>"],
                                  initial_alphabet=pre_tokenizers.ByteLevel.alphabet())
    tok.train_from_iterator(text, trainer)
    out = os.path.join(HERE, "bpe")
    os.makedirs(out, exist_ok=True)
    tok.save(os.path.join(out, "tokenizer.json"))
    tok.model.save(out)
    samples = text[:20] + [
        "  leading spaces and   inner   runs\tand tabs\n",
        "Numbers 12345 and 3.14, punctuation!? (brackets) don't we'll they're",
        "Unicode: café, naïve, 東京, emoji 🙂 and <|endoftext|> marker",
        "",
    ]
    refs = [{"text": s, "ids": tok.encode(s).ids} for s in samples]
    with open(os.path.join(out, "reference.json"), "w", encoding="utf-8") as f:
        json.dump(refs, f, ensure_ascii=False)


if __name__ == "__main__":
    tiny_neox("neox_parallel", torch.float32)
    tiny_neox("neox_sequential", torch.float32, use_parallel_residual=False, hidden_act="gelu_new",
              rotary_pct=1.0, rotary_emb_base=500.0)
    tiny_neox("neox_f16", torch.float16)
    tiny_neox("neox_bf16", torch.bfloat16)
    bpe()
