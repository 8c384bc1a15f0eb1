"""Reference backend servers for the slicemend wire protocol (v1).

Two servers: a generation adapter wrapping a latent-diffusion pipeline
with a structure-conditioning controller over soft-edge maps, and a
filter adapter wrapping a vision-language QA model that answers binary
attribute questions. Both are optional extras of the core pipeline and
speak only the documented wire schema; nothing here imports the core
package.

Real model stacks load lazily and are optional; deterministic stub
engines back the conformance suite so protocol behavior is testable on
any machine.
"""

__version__ = "0.1.0"

WIRE_VERSION = "1"

DEVICE_ENV_VAR = "SLICEMEND_ADAPTER_DEVICE"
