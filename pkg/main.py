import argparse
import sys
from typing import Optional

from loguru import logger
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from src.config import LOG_LEVEL, load_config
from src.errors import DrPrivacyError
from src.pipeline import cmd_estimate, cmd_run, cmd_sweep

console = Console()


# ===================================================================
# 🖥️ 출력
# ===================================================================

def show_estimate(matrix, space) -> None:
    table = Table(title="기본 전이 행렬", box=box.SIMPLE)
    table.add_column("항목", style="cyan")
    table.add_column("값", justify="right")
    table.add_row("상태 수 n", str(matrix.n))
    table.add_row("지지 밀도", f"{matrix.support_mask.mean():.3f}")
    table.add_row("전력 범위 (MW)", f"{space.bin_edges[0]:.3f} ~ {space.bin_edges[-1]:.3f}")
    console.print(table)


def show_run(result) -> None:
    privacy = result.privacy
    cost = result.private.cost
    eps = "n/a" if privacy.epsilon is None else f"{privacy.epsilon:.4g}"
    console.print(Panel(
        f"method: [bold]{cost.method}[/bold]  k={cost.k:g}\n"
        f"ε = {eps}, δ = {privacy.delta:.3g} (ψ = {privacy.psi:.4f})\n"
        f"프라이버시 비용 total = {cost.total:.6g}, realized gap = {cost.realized_gap:.6g}",
        title="🔒 사유 정책",
        border_style="green",
    ))

    table = Table(title="⚡ DR 이벤트 감축량", box=box.SIMPLE)
    table.add_column("시나리오", style="cyan")
    table.add_column("peak (MW)", justify="right")
    table.add_column("mean (MW)", justify="right")
    table.add_column("ratio", justify="right")
    for name, m in result.metrics.scenarios.items():
        ratio = "-" if m.capacity_ratio is None else f"{m.capacity_ratio:.3f}"
        table.add_row(name, f"{m.peak_reduction_mw:.4f}", f"{m.mean_reduction_mw:.4f}", ratio)
    console.print(table)
    console.print(f"[dim]📦 {len(result.manifest.artifacts)} 개 산출물 → {result.out_dir}[/dim]")


def show_sweep(frame) -> None:
    table = Table(title="📉 k 에 따른 프라이버시 비용", box=box.SIMPLE)
    for column in frame.columns:
        table.add_column(column, justify="right" if column != "method" else "left")
    for row in frame.itertuples(index=False):
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)


# ===================================================================
# 🚀 진입점
# ===================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drpriv",
        description="LS-MDP 앙상블 DR 디스패치 + Dirichlet 메커니즘 차분 프라이버시",
    )
    parser.add_argument("command", choices=["estimate", "run", "sweep"])
    parser.add_argument("--config", required=True, help="RunConfig JSON 경로")
    parser.add_argument("--seed", type=int, default=None, help="설정 파일의 seed 를 덮어씀")
    parser.add_argument("--out", default=None, help="출력 디렉터리")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    logger.remove()
    logger.add(sys.stderr, level=LOG_LEVEL)

    try:
        config = load_config(args.config, seed=args.seed, output_dir=args.out)
        console.print(f"[bold cyan]🚀 {args.command}[/bold cyan] (seed={config.seed}, out={config.output_dir})")
        if args.command == "estimate":
            matrix, space, _ = cmd_estimate(config)
            show_estimate(matrix, space)
        elif args.command == "run":
            show_run(cmd_run(config))
        else:
            show_sweep(cmd_sweep(config))
    except DrPrivacyError as e:
        console.print(f"[bold red]❌ {type(e).__name__}: {e}[/bold red]")
        return e.exit_code
    except Exception as e:
        logger.exception(f"예상하지 못한 오류: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
