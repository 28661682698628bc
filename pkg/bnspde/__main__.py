from bnspde.cli import main

main(prog_name="bnspde")
