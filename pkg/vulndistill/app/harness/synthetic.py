"""Template-generated contracts with a planted, class-specific trigger.

Vulnerable samples carry the trigger statement in their first function;
clean samples carry a safe statement in the same place. Filler code is drawn
from a pool that never contains any trigger token, so the two halves are
separable from token counts alone.
"""
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from ..config import VULNERABILITY_CLASSES
from ..errors import DatasetError
from ..schemas import ContractLabel, RawContract

logger = logging.getLogger(__name__)

MIN_SYNTHETIC = 20

IDENTIFIERS = (
    "amount", "total", "limit", "rate", "fee", "reward", "stake", "bonus", "price", "supply",
    "deposit", "quota", "share", "credit", "weight", "period", "round", "score", "level", "index",
)
NAMES = ("Vault", "Token", "Auction", "Lottery", "Escrow", "Registry", "Pool", "Market", "Treasury", "Ledger")
FILLERS = (
    "require(msg.sender == owner);",
    "{a} = {b};",
    "balances[owner] = {a};",
    "if ({a} > {b}) {{\n            {a} = {b};\n        }}",
    "emit Updated({a});",
    "require({a} != {b});",
)

# (site signature, vulnerable body, clean body)
SITES: Dict[str, Tuple[str, str, str]] = {
    "reentrancy": (
        "function withdraw() public",
        "uint256 amount = balances[msg.sender];\n        require(msg.sender.call.value(amount)());\n"
        "        balances[msg.sender] = 0;",
        "uint256 amount = balances[msg.sender];\n        balances[msg.sender] = 0;\n"
        "        msg.sender.transfer(amount);",
    ),
    "timestamp": (
        "function play() public",
        "if (block.timestamp % 15 == 0) {\n            owner = msg.sender;\n        }",
        "if (block.number % 15 == 0) {\n            owner = msg.sender;\n        }",
    ),
    "delegatecall": (
        "function forward(address target) public",
        "require(target.delegatecall(msg.data));",
        "require(target != address(0));",
    ),
    "integer-overflow-underflow": (
        "function credit(uint256 value) public",
        "balances[msg.sender] += value;",
        "balances[msg.sender] = balances[msg.sender].add(value);",
    ),
    "cdav": (
        "constructor(address existing) public",
        "wallet = new Wallet(existing);\n        owner = msg.sender;",
        "wallet = Wallet(existing);\n        owner = msg.sender;",
    ),
}

# Tokens that appear only in vulnerable samples of each class.
TRIGGER_TOKENS: Dict[str, Tuple[str, ...]] = {
    "reentrancy": ("call",),
    "timestamp": ("block.timestamp",),
    "delegatecall": ("delegatecall",),
    "integer-overflow-underflow": ("+=",),
    "cdav": ("new",),
}


def _filler_function(rng: np.random.Generator, index: int) -> str:
    statements = []
    for _ in range(int(rng.integers(2, 5))):
        a, b = rng.choice(IDENTIFIERS, size=2, replace=False)
        statements.append("        " + str(rng.choice(FILLERS)).format(a=a, b=b))
    arg = rng.choice(IDENTIFIERS)
    body = "\n".join(statements)
    return f"    function update{index}(uint256 {arg}) public {{\n{body}\n    }}\n"


def _contract(vulnerability: str, vulnerable: bool, rng: np.random.Generator) -> str:
    signature, bad, good = SITES[vulnerability]
    name = f"{rng.choice(NAMES)}{int(rng.integers(0, 1000))}"
    lines = ["pragma solidity ^0.4.24;", "", f"contract {name} {{"]
    if vulnerability == "integer-overflow-underflow" and not vulnerable:
        lines.append("    using SafeMath for uint256;")
    lines += [
        "    mapping(address => uint256) public balances;",
        "    address public owner;",
        "    Wallet public wallet;",
    ]
    lines += [f"    uint256 public {ident};" for ident in IDENTIFIERS]
    lines += ["    event Updated(uint256 value);", ""]
    lines.append(f"    {signature} {{\n        {bad if vulnerable else good}\n    }}\n")
    for i in range(int(rng.integers(2, 5))):
        lines.append(_filler_function(rng, i))
    lines.append("}")
    return "\n".join(lines) + "\n"


def make_synthetic_corpus(n: int, vulnerability: str, seed: int) -> List[RawContract]:
    """``n`` contracts, half with the planted trigger (the extra one, if n is odd, is clean)."""
    if n < MIN_SYNTHETIC:
        raise DatasetError(f"synthetic corpus needs n >= {MIN_SYNTHETIC}, got {n}")
    if vulnerability not in VULNERABILITY_CLASSES:
        raise DatasetError(f"unknown vulnerability class '{vulnerability}'")
    rng = np.random.default_rng(seed)
    flags = np.array([1] * (n // 2) + [0] * (n - n // 2))
    rng.shuffle(flags)
    contracts = []
    for i, flag in enumerate(flags):
        contracts.append(RawContract(
            path=f"{vulnerability}_{i:04d}.sol",
            source=_contract(vulnerability, bool(flag), rng),
            label=ContractLabel(vulnerability=vulnerability, flag=int(flag)),
        ))
    logger.info("✅ Generated %d synthetic '%s' contracts (seed %d)", n, vulnerability, seed)
    return contracts


def write_synthetic_corpus(contracts: List[RawContract], out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``<out_dir>/contracts/*.sol`` plus ``<out_dir>/labels.csv``."""
    out_dir = Path(out_dir)
    contracts_dir = out_dir / "contracts"
    contracts_dir.mkdir(parents=True, exist_ok=True)
    for contract in contracts:
        (contracts_dir / contract.path).write_text(contract.source, encoding="utf-8")
    labels_path = out_dir / "labels.csv"
    pd.DataFrame(
        [{"filename": c.path, "class": c.label.vulnerability, "flag": c.label.flag} for c in contracts]
    ).to_csv(labels_path, index=False)
    return contracts_dir, labels_path
