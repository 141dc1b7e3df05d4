#!/usr/bin/env python

import sys

from knnattn.cli.commands import main

''' main '''
if __name__ == '__main__':
    sys.exit(main())
