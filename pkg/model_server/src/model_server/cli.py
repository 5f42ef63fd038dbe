"""Command line entry point."""
import click
import uvicorn

from .app import bundle_from_env, create_app
from .stub import StubBundle


@click.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=9041, show_default=True, type=int)
@click.option("--backend", type=click.Choice(["stub", "real"]), default=None,
              help="Model bundle; defaults to $DSS_SERVER_BACKEND or stub.")
@click.option("--stub-stride", default=14, show_default=True, type=int,
              help="Patch stride of the stub feature grid.")
def main(host: str, port: int, backend: str | None, stub_stride: int):
    """Serve the feature/segment/locate/judge endpoints."""
    if backend == "stub":
        bundle = StubBundle(stride_px=stub_stride)
    elif backend == "real":
        from .real import RealBundle
        bundle = RealBundle()
    else:
        bundle = bundle_from_env()
    uvicorn.run(create_app(bundle), host=host, port=port)


if __name__ == "__main__":
    main()
