"""Low-rank adapters on attention value projections, plus the fine-tuning
loop that trains them (with the classifier head) on the candidate pool."""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ExtractorError


class LoraLinear(nn.Module):
    """Frozen base linear plus a trainable rank-r update B @ A."""

    def __init__(self, base: nn.Linear, rank: int = 2):
        super().__init__()
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x):
        return self.base(x) + torch.nn.functional.linear(
            torch.nn.functional.linear(x, self.lora_a), self.lora_b
        )


def attach_value_adapters(model: nn.Module, rank: int = 2) -> int:
    """Wrap every linear module named `...value` with a rank-r adapter."""
    targets = [
        name
        for name, module in model.named_modules()
        if name.endswith(".value") and isinstance(module, nn.Linear)
    ]
    for name in targets:
        parent_name, _, child = name.rpartition(".")
        parent = model.get_submodule(parent_name) if parent_name else model
        setattr(parent, child, LoraLinear(getattr(parent, child), rank=rank))
    return len(targets)


def adapter_parameter_names(model: nn.Module) -> list[str]:
    return [name for name, _ in model.named_parameters() if "lora_" in name]


def fine_tune(
    model: nn.Module,
    inputs: dict,
    labels: list[int],
    epochs: int = 10,
    lr: float = 3e-4,
    warmup_frac: float = 0.06,
    batch_size: int = 8,
    seed: int = 0,
) -> dict:
    """Cross-entropy training of adapters + classifier head: AdamW, a
    warm-up fraction of steps, then linear decay to zero.

    `inputs` holds full-dataset tensors (padded together), row i = example i.
    """
    n = len(labels)
    if n == 0:
        raise ExtractorError("cannot fine-tune on an empty dataset")
    for param in model.parameters():
        param.requires_grad_(False)
    trainable = []
    for name, param in model.named_parameters():
        if "lora_" in name or name.startswith("classifier."):
            param.requires_grad_(True)
            trainable.append(param)
    if not trainable:
        raise ExtractorError("no trainable parameters; attach adapters first")

    steps_per_epoch = math.ceil(n / batch_size)
    total_steps = max(1, epochs * steps_per_epoch)
    warmup_steps = max(1, int(round(warmup_frac * total_steps)))
    optimizer = torch.optim.AdamW(trainable, lr=lr)

    def schedule(step):
        if step < warmup_steps:
            return (step + 1) / warmup_steps
        remaining = total_steps - warmup_steps
        return max(0.0, (total_steps - step) / max(1, remaining))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, schedule)
    generator = torch.Generator().manual_seed(seed)
    label_tensor = torch.tensor(labels, dtype=torch.long)

    model.train()
    last_loss = float("nan")
    for _ in range(epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            batch = {key: value[idx] for key, value in inputs.items()}
            out = model(**batch, labels=label_tensor[idx])
            optimizer.zero_grad()
            out.loss.backward()
            optimizer.step()
            scheduler.step()
            last_loss = float(out.loss.detach())
    model.eval()
    return {"epochs": epochs, "steps": total_steps, "final_loss": last_loss}
