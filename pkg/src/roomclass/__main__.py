from roomclass.cli import main

main()
